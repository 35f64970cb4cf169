#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ddqos/errors.hpp"
#include "ddqos/qos.hpp"

namespace ddqos {

/// r_t + a1 r_{t-1} + a2 r_{t-2} = w_t + b1 w_{t-1},  Var(w) = sigma_w2.
struct ArmaModel {
  double a1 = 0.0;
  double a2 = 0.0;
  double b1 = 0.0;
  double sigma_w2 = 1.0;

  /// Both roots of z^2 + a1 z + a2 strictly inside the unit circle.
  [[nodiscard]] bool stationary() const {
    return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
  }

  /// G_wr(exp(j theta)) = (1 + b1 z^-1) / (1 + a1 z^-1 + a2 z^-2).
  [[nodiscard]] std::complex<double> transfer(double theta) const {
    const std::complex<double> zi = std::polar(1.0, -theta);
    return (1.0 + b1 * zi) / (1.0 + a1 * zi + a2 * zi * zi);
  }

  /// sigma_w2 |G_wr|^2.
  [[nodiscard]] double psd(double theta) const { return sigma_w2 * std::norm(transfer(theta)); }

  void validate() const {
    if (!(sigma_w2 > 0.0) || !std::isfinite(sigma_w2)) throw InvalidArgument("sigma_w2 must be positive");
    if (!stationary()) throw UnstableFit("AR polynomial has a root on or outside the unit circle");
  }
};

/// Coefficients fitted to the BPA balancing-reserve record, used as the
/// default regulation-signal generator.
inline ArmaModel bpa_arma_model() { return {-1.16, 0.2301, -0.2489, 4.36e-3}; }

inline void to_json(nlohmann::json& j, const ArmaModel& m) {
  j = nlohmann::json{{"a1", m.a1}, {"a2", m.a2}, {"b1", m.b1}, {"sigma_w2", m.sigma_w2}};
}

inline void from_json(const nlohmann::json& j, ArmaModel& m) {
  j.at("a1").get_to(m.a1);
  j.at("a2").get_to(m.a2);
  j.at("b1").get_to(m.b1);
  j.at("sigma_w2").get_to(m.sigma_w2);
}

struct ElsOptions {
  std::size_t min_length = 100;
  double initial_covariance = 1e4;
};

/// Recursive extended least squares for ARMA(2, 1): the unknown innovation
/// w_{t-1} in the regressor is replaced by the a-posteriori residual.
inline ArmaModel els_fit(std::span<const double> series, const ElsOptions& opt = {}) {
  if (series.size() < opt.min_length) throw InvalidArgument("insufficient data for ARMA fit");
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(series.size());
  std::vector<double> r(series.size());
  std::transform(series.begin(), series.end(), r.begin(), [mean](double v) { return v - mean; });

  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  Eigen::Matrix3d P = opt.initial_covariance * Eigen::Matrix3d::Identity();
  double w_prev = 0.0;
  for (std::size_t t = 2; t < r.size(); ++t) {
    const Eigen::Vector3d phi(-r[t - 1], -r[t - 2], w_prev);
    const Eigen::Vector3d Pphi = P * phi;
    const double denom = 1.0 + phi.dot(Pphi);
    const Eigen::Vector3d gain = Pphi / denom;
    theta += gain * (r[t] - phi.dot(theta));
    P -= gain * Pphi.transpose();
    w_prev = r[t] - phi.dot(theta);
  }

  ArmaModel model{theta(0), theta(1), theta(2), 0.0};
  if (!model.stationary()) throw UnstableFit("fitted AR polynomial is not stable");
  if (std::abs(model.b1) >= 1.0) throw UnstableFit("fitted MA polynomial is not invertible");
  // Innovation variance from the inverse filter at the final coefficients.
  double w1 = 0.0, ss = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 2; t < r.size(); ++t) {
    const double w = r[t] + model.a1 * r[t - 1] + model.a2 * r[t - 2] - model.b1 * w1;
    w1 = w;
    if (t >= 50) {
      ss += w * w;
      ++count;
    }
  }
  model.sigma_w2 = ss / static_cast<double>(std::max<std::size_t>(count, 1));
  return model;
}

/// Stationary realisation driven by Gaussian white noise.
template <class Rng>
std::vector<double> arma_generate(const ArmaModel& model, std::size_t n, Rng& rng, std::size_t burn_in = 500) {
  model.validate();
  std::normal_distribution<double> noise(0.0, std::sqrt(model.sigma_w2));
  std::vector<double> out;
  out.reserve(n);
  double r1 = 0.0, r2 = 0.0, w1 = 0.0;
  for (std::size_t t = 0; t < n + burn_in; ++t) {
    const double w = noise(rng);
    const double r = -model.a1 * r1 - model.a2 * r2 + w + model.b1 * w1;
    r2 = r1;
    r1 = r;
    w1 = w;
    if (t >= burn_in) out.push_back(r);
  }
  return out;
}

/// Rational filter B(z^-1) / A(z^-1) with a[0] = 1, transposed direct form II.
class LinearFilter {
 public:
  LinearFilter(std::vector<double> numerator, std::vector<double> denominator)
      : b_(std::move(numerator)), a_(std::move(denominator)) {
    if (b_.empty() || a_.empty()) throw InvalidArgument("filter coefficient lists must be non-empty");
    if (a_.front() != 1.0) throw InvalidArgument("denominator leading coefficient must be 1");
    const std::size_t n = std::max(a_.size(), b_.size());
    b_.resize(n, 0.0);
    a_.resize(n, 0.0);
    state_.assign(n, 0.0);
    if (!stable()) throw InvalidArgument("filter has a pole on or outside the unit circle");
  }

  static LinearFilter identity() { return LinearFilter({1.0}, {1.0}); }

  [[nodiscard]] const std::vector<double>& numerator() const { return b_; }
  [[nodiscard]] const std::vector<double>& denominator() const { return a_; }

  double step(double x) {
    const double y = b_[0] * x + state_[0];
    for (std::size_t k = 1; k < b_.size(); ++k)
      state_[k - 1] = b_[k] * x - a_[k] * y + (k < state_.size() - 1 ? state_[k] : 0.0);
    return y;
  }

  void reset() { std::fill(state_.begin(), state_.end(), 0.0); }

  [[nodiscard]] std::complex<double> frequency_response(double theta) const {
    const std::complex<double> zi = std::polar(1.0, -theta);
    std::complex<double> num = 0.0, den = 0.0, p = 1.0;
    for (std::size_t k = 0; k < b_.size(); ++k, p *= zi) {
      num += b_[k] * p;
      den += a_[k] * p;
    }
    return num / den;
  }

  [[nodiscard]] double dc_gain() const { return frequency_response(0.0).real(); }

  [[nodiscard]] std::vector<std::complex<double>> poles() const {
    std::size_t order = a_.size() - 1;
    while (order > 0 && a_[order] == 0.0) --order;
    if (order == 0) return {};
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(order),
                                                      static_cast<Eigen::Index>(order));
    for (std::size_t k = 0; k < order; ++k) companion(0, static_cast<Eigen::Index>(k)) = -a_[k + 1];
    for (std::size_t k = 1; k < order; ++k)
      companion(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = 1.0;
    const Eigen::VectorXcd ev = companion.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
  }

  [[nodiscard]] bool stable() const {
    const auto p = poles();
    return std::all_of(p.begin(), p.end(), [](auto z) { return std::abs(z) < 1.0; });
  }

 private:
  std::vector<double> b_;
  std::vector<double> a_;
  std::vector<double> state_;
};

/// First-order Butterworth low-pass by bilinear transform with prewarping.
/// `cutoff` is in cycles per minute, `sampling_period` in minutes.
inline LinearFilter butterworth_lowpass(double cutoff, double sampling_period) {
  if (!(sampling_period > 0.0)) throw InvalidArgument("sampling period must be positive");
  const double nyquist = 0.5 / sampling_period;
  if (!(cutoff > 0.0) || !(cutoff < nyquist)) throw InvalidArgument("cut-off must lie in (0, Nyquist)");
  const double k = std::tan(std::numbers::pi * cutoff * sampling_period);
  const double gain = k / (1.0 + k);
  const double pole = (1.0 - k) / (1.0 + k);
  return LinearFilter({gain, gain}, {1.0, -pole});
}

/// Runs a fresh copy of `filter` (zero initial state) over `series`.
inline std::vector<double> filter_apply(LinearFilter filter, std::span<const double> series) {
  filter.reset();
  std::vector<double> out;
  out.reserve(series.size());
  for (double x : series) {
    if (!std::isfinite(x)) throw InvalidArgument("filter input contains a non-finite sample");
    out.push_back(filter.step(x));
  }
  return out;
}

inline std::vector<double> scale_reference(std::span<const double> r1, double epsilon) {
  detail::require(epsilon >= 0.0 && epsilon <= 1.0, "reference scale must lie in [0, 1]");
  std::vector<double> out(r1.begin(), r1.end());
  for (double& v : out) v *= epsilon;
  return out;
}

/// Pulls the reference back when the filtered reference (state of charge)
/// passes tau times a QoS bound in the direction the reference is pushing.
inline double reshape_reference(double r, double R, const QosBounds& bounds, double delta, double tau) {
  detail::require(tau >= 0.0 && tau < 1.0, "reshaping threshold must lie in [0, 1)");
  detail::require(delta >= 0.0, "reshaping gain must be non-negative");
  if (R > tau * bounds.upper && r > 0.0) return std::max(0.0, r - delta * (R - tau * bounds.upper));
  if (R < tau * bounds.lower && r < 0.0) return std::min(0.0, r - delta * (R - tau * bounds.lower));
  return r;
}

/// Reads a single-column numeric CSV. A non-numeric first line is taken as a header.
inline std::vector<double> read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open series file: " + path);
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    std::string cell = line.substr(first, line.find(',', first) - first);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      if (line_no == 1) continue;
      throw InvalidArgument("non-numeric value on line " + std::to_string(line_no) + " of " + path);
    }
  }
  return out;
}

}  // namespace ddqos
