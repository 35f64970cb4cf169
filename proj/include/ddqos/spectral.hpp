#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "ddqos/control.hpp"
#include "ddqos/errors.hpp"
#include "ddqos/load_model.hpp"
#include "ddqos/mean_field.hpp"
#include "ddqos/qos.hpp"
#include "ddqos/signals.hpp"
#include "ddqos/statistics.hpp"

namespace ddqos {

/// Scalar spectral density sampled at the angular frequencies `theta`.
///
/// Densities are two-sided: the variance of the process is
/// (1 / 2 pi) * integral over [-pi, pi).
struct SpectralDensity {
  std::vector<double> theta;
  std::vector<double> values;

  /// Uniform periodic grid theta_k = -pi + 2 pi k / M, k = 0..M-1.
  static std::vector<double> uniform_grid(std::size_t points) {
    detail::require(points >= 2 && points % 2 == 0, "grid size must be even and at least 2");
    std::vector<double> g(points);
    for (std::size_t k = 0; k < points; ++k)
      g[k] = -std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(points);
    return g;
  }

  static SpectralDensity evaluate(std::vector<double> grid, const std::function<double(double)>& fn) {
    SpectralDensity s{std::move(grid), {}};
    s.values.reserve(s.theta.size());
    for (double th : s.theta) s.values.push_back(fn(th));
    return s;
  }

  /// As evaluate(), for an even function: each value is computed once per
  /// +-theta pair present on the grid.
  static SpectralDensity evaluate_even(std::vector<double> grid, const std::function<double(double)>& fn) {
    SpectralDensity s{std::move(grid), {}};
    const std::size_t m = s.theta.size();
    s.values.assign(m, 0.0);
    std::vector<bool> done(m, false);
    for (std::size_t k = 0; k < m; ++k) {
      if (done[k]) continue;
      s.values[k] = fn(s.theta[k]);
      done[k] = true;
      const std::size_t partner = m - k;
      if (k > 0 && partner < m && !done[partner] && std::abs(s.theta[partner] + s.theta[k]) < 1e-12) {
        s.values[partner] = s.values[k];
        done[partner] = true;
      }
    }
    return s;
  }

  [[nodiscard]] std::size_t size() const { return theta.size(); }

  /// (1 / 2 pi) * integral, by the periodic trapezoidal rule on a uniform grid.
  [[nodiscard]] double average() const {
    detail::require(!values.empty(), "empty spectral density");
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }

  /// Value at the grid point closest to `th`.
  [[nodiscard]] double at(double th) const {
    detail::require(!theta.empty(), "empty spectral density");
    std::size_t best = 0;
    for (std::size_t k = 1; k < theta.size(); ++k)
      if (std::abs(theta[k] - th) < std::abs(theta[best] - th)) best = k;
    return values[best];
  }
};

inline constexpr std::size_t kDefaultGridPoints = 1u << 14;

/// Grid fine enough that periodic trapezoidal quadrature resolves |H|^2 of
/// `filter`: for a discounted filter the error decays like beta^M.
inline std::size_t recommended_grid_points(const QosFilter& filter,
                                           std::size_t minimum = kDefaultGridPoints) {
  std::size_t m = minimum;
  double needed = 0.0;
  if (filter.is_discounted()) needed = 24.0 / std::max(1e-12, -std::log(std::max(filter.beta(), 1e-300)));
  else needed = 8.0 * static_cast<double>(filter.window() + 1);
  while (static_cast<double>(m) < needed) m *= 2;
  return m;
}

/// Noise of the single-load linear model driven by D_{t+1}.
struct NoiseModel {
  Eigen::MatrixXd covariance;      // Sigma_Delta
  Eigen::VectorXd input_coupling;  // Bbar = (pi0 E)^T
};

/// Sigma_Delta = sum_x pi0(x) (diag(P0(x,.)) - P0(x,.)^T P0(x,.)).
inline Eigen::MatrixXd nominal_noise_covariance(const Eigen::MatrixXd& P0, const Pmf& pi0) {
  const Eigen::Index d = P0.rows();
  if (P0.cols() != d || pi0.size() != d) throw DimensionMismatch("chain and pmf dimensions differ");
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index x = 0; x < d; ++x) {
    const Eigen::RowVectorXd row = P0.row(x);
    S.diagonal() += pi0(x) * row.transpose();
    S -= pi0(x) * row.transpose() * row;
  }
  return S;
}

inline NoiseModel nominal_noise_model(const TransitionModel& model) {
  const Pmf pi0 = stationary_pmf(model.nominal());
  const auto deriv = derivative_matrices(model);
  return {nominal_noise_covariance(model.nominal(), pi0), (pi0.weights() * deriv.first).transpose()};
}

/// c(k) = pi0 diag(l~) P0^k l~ for k = 0..max_lag, with l~ = l - (pi0 l) 1.
inline std::vector<double> markov_autocovariance(const Eigen::MatrixXd& P0, const Pmf& pi0,
                                                 const Eigen::VectorXd& ell, std::size_t max_lag) {
  if (P0.rows() != ell.size() || pi0.size() != ell.size())
    throw DimensionMismatch("chain, pmf and function dimensions differ");
  const Eigen::VectorXd centered = ell.array() - pi0.weights().dot(ell.transpose());
  const Eigen::RowVectorXd weight = pi0.weights().cwiseProduct(centered.transpose());
  std::vector<double> c;
  c.reserve(max_lag + 1);
  Eigen::VectorXd v = centered;
  for (std::size_t k = 0; k <= max_lag; ++k) {
    c.push_back(weight.dot(v.transpose()));
    v = P0 * v;
  }
  return c;
}

/// S(theta) = c(0) + 2 sum_{k>=1} c(k) cos(k theta).
inline SpectralDensity autocovariance_transform(std::span<const double> c, std::vector<double> grid) {
  detail::require(!c.empty(), "empty autocovariance sequence");
  return SpectralDensity::evaluate(std::move(grid), [c](double th) {
    double s = c[0];
    for (std::size_t k = 1; k < c.size(); ++k) s += 2.0 * c[k] * std::cos(static_cast<double>(k) * th);
    return s;
  });
}

/// Second-order statistics of L_t = l(X_t) for one load in the mean-field
/// limit, through the linear model Gamma_{t+1} = Gamma_t P0 + D_{t+1} with
///   S_D(theta) = Sigma_Delta + Bbar Bbar^T S_zeta(theta).
///
/// The Perron direction is deflated: D lives on the zero-sum subspace, on
/// which P0^T and P0^T - pi0^T 1^T agree, and the latter has no unit pole.
class QosSpectralModel {
 public:
  QosSpectralModel(const Eigen::MatrixXd& P0, const Pmf& pi0, const Eigen::VectorXd& ell,
                   const NoiseModel& noise, std::vector<double> grid)
      : grid_(std::move(grid)) {
    const Eigen::Index d = P0.rows();
    if (P0.cols() != d || pi0.size() != d || ell.size() != d || noise.covariance.rows() != d ||
        noise.input_coupling.size() != d)
      throw DimensionMismatch("spectral model inputs have inconsistent dimensions");
    mean_ = pi0.weights().dot(ell.transpose());
    const Eigen::VectorXcd centered = (ell.array() - mean_).matrix().cast<std::complex<double>>();
    // M(theta)^T = I - exp(-j theta) (P0 - 1 pi0)
    const Eigen::MatrixXcd deflated =
        (P0 - Eigen::VectorXd::Ones(d) * pi0.weights()).cast<std::complex<double>>();
    const Eigen::MatrixXcd sigma = noise.covariance.cast<std::complex<double>>();
    const Eigen::VectorXcd bbar = noise.input_coupling.cast<std::complex<double>>();

    const std::size_t m = grid_.size();
    nominal_.assign(m, 0.0);
    coupling_.assign(m, 0.0);
    std::vector<bool> done(m, false);
    for (std::size_t k = 0; k < m; ++k) {
      if (done[k]) continue;
      const std::complex<double> zinv = std::polar(1.0, -grid_[k]);
      Eigen::MatrixXcd M = Eigen::MatrixXcd::Identity(d, d) - zinv * deflated;
      Eigen::PartialPivLU<Eigen::MatrixXcd> lu(M);
      if (!(lu.rcond() > 1e-13)) throw NumericalFailure("singular resolvent on the frequency grid");
      const Eigen::VectorXcd h = lu.solve(centered);
      nominal_[k] = std::max(0.0, (h.transpose() * sigma * h.conjugate())(0).real());
      coupling_[k] = std::norm((h.transpose() * bbar)(0));
      done[k] = true;
      // Real processes: S(-theta) = S(theta). Mirror onto the grid partner if present.
      const std::size_t partner = m - k;
      if (k > 0 && partner < m && std::abs(grid_[partner] + grid_[k]) < 1e-12) {
        nominal_[partner] = nominal_[k];
        coupling_[partner] = coupling_[k];
        done[partner] = true;
      }
    }
  }

  /// Convenience constructor for a state function on a transition model.
  QosSpectralModel(const TransitionModel& model, const Eigen::VectorXd& ell, std::vector<double> grid)
      : QosSpectralModel(model.nominal(), stationary_pmf(model.nominal()), ell,
                         nominal_noise_model(model), std::move(grid)) {}

  [[nodiscard]] const std::vector<double>& grid() const { return grid_; }
  /// pi0 l, the nominal mean of L.
  [[nodiscard]] double mean() const { return mean_; }

  /// S_L at zeta = 0.
  [[nodiscard]] SpectralDensity nominal_psd() const { return {grid_, nominal_}; }

  /// |l~^T M^-1 Bbar|^2: gain from zeta to L.
  [[nodiscard]] SpectralDensity input_gain() const { return {grid_, coupling_}; }

  /// S_L for zeta = eps * zeta^1 with zeta^1 having density `unit_input`.
  [[nodiscard]] SpectralDensity psd(const SpectralDensity& unit_input, double eps) const {
    if (unit_input.size() != grid_.size()) throw DimensionMismatch("input density is on a different grid");
    SpectralDensity s{grid_, nominal_};
    for (std::size_t k = 0; k < s.values.size(); ++k) s.values[k] += eps * eps * coupling_[k] * unit_input.values[k];
    return s;
  }

 private:
  std::vector<double> grid_;
  std::vector<double> nominal_;
  std::vector<double> coupling_;
  double mean_ = 0.0;
};

/// S_L on `grid` for input density `unit_input` scaled by eps.
inline SpectralDensity psd_of_L(const NoiseModel& noise, const Eigen::MatrixXd& P0, const Pmf& pi0,
                                const Eigen::VectorXd& ell, const SpectralDensity& unit_input, double eps) {
  QosSpectralModel model(P0, pi0, ell, noise, unit_input.theta);
  return model.psd(unit_input, eps);
}

/// (1 / 2 pi) * integral of |H|^2 S_L over the grid.
inline double qos_variance(const SpectralDensity& S_L, const QosFilter& filter) {
  detail::require(S_L.size() > 0, "empty spectral density");
  double s = 0.0;
  for (std::size_t k = 0; k < S_L.size(); ++k) s += std::norm(filter.frequency_response(S_L.theta[k])) * S_L.values[k];
  return s / static_cast<double>(S_L.size());
}

/// H(1) E[L].
inline double qos_mean(const QosSpectralModel& model, const QosFilter& filter) {
  return filter.dc_gain() * model.mean();
}

struct VarianceExpansion {
  double nominal = 0.0;       // V at eps = 0
  double second_order = 0.0;  // coefficient of eps^2
  std::vector<double> eps;
  std::vector<double> variance;  // V(eps) from the full density
  std::vector<double> residual;  // V(eps) - (nominal + eps^2 second_order)

  [[nodiscard]] double predict(double e) const { return nominal + e * e * second_order; }
};

inline VarianceExpansion variance_taylor(const QosSpectralModel& model, const QosFilter& filter,
                                         const SpectralDensity& unit_input, std::span<const double> eps_grid) {
  for (double e : eps_grid) detail::require(e > 0.0 && e <= 0.5, "expansion points must lie in (0, 0.5]");
  if (unit_input.size() != model.grid().size()) throw DimensionMismatch("input density is on a different grid");
  VarianceExpansion out;
  out.nominal = qos_variance(model.nominal_psd(), filter);
  SpectralDensity slope = model.input_gain();
  for (std::size_t k = 0; k < slope.values.size(); ++k) slope.values[k] *= unit_input.values[k];
  out.second_order = qos_variance(slope, filter);
  for (double e : eps_grid) {
    const double v = qos_variance(model.psd(unit_input, e), filter);
    out.eps.push_back(e);
    out.variance.push_back(v);
    out.residual.push_back(v - out.predict(e));
  }
  return out;
}

/// Density of the scaled, low-pass-filtered regulation signal:
///   scale^2 |G_BP|^2 sigma_w2 |G_wr|^2.
inline SpectralDensity reference_psd(const ArmaModel& arma, const LinearFilter& lowpass, double scale,
                                     std::vector<double> grid) {
  return SpectralDensity::evaluate_even(std::move(grid), [&](double th) {
    return scale * scale * std::norm(lowpass.frequency_response(th)) * arma.psd(th);
  });
}

/// Density of the command zeta produced by the closed loop from a reference density.
inline SpectralDensity input_psd(const StateSpace& reference_to_zeta, const SpectralDensity& reference) {
  SpectralDensity gain = SpectralDensity::evaluate_even(
      reference.theta, [&](double th) { return std::norm(reference_to_zeta.frequency_response(th)); });
  for (std::size_t k = 0; k < gain.size(); ++k) gain.values[k] *= reference.values[k];
  return gain;
}

/// Welch estimate with a periodic Hann window and per-segment mean removal.
/// Returns the two-sided density at theta_k = 2 pi k / L for k = 0..L/2.
inline SpectralDensity welch_psd(std::span<const double> series, std::size_t segment_length,
                                 std::size_t overlap) {
  detail::require(segment_length >= 4 && segment_length % 2 == 0, "segment length must be even and >= 4");
  detail::require(overlap < segment_length, "overlap must be shorter than a segment");
  if (series.size() < 2 * segment_length) throw InvalidArgument("series too short for Welch estimate");

  const std::size_t L = segment_length;
  std::vector<double> window(L);
  double wss = 0.0;
  for (std::size_t n = 0; n < L; ++n) {
    window[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(L)));
    wss += window[n] * window[n];
  }
  Eigen::FFT<double> fft;
  std::vector<double> acc(L / 2 + 1, 0.0);
  std::vector<double> seg(L);
  std::vector<std::complex<double>> spec;
  std::size_t segments = 0;
  const std::size_t step = L - overlap;
  for (std::size_t start = 0; start + L <= series.size(); start += step) {
    double m = 0.0;
    for (std::size_t n = 0; n < L; ++n) m += series[start + n];
    m /= static_cast<double>(L);
    for (std::size_t n = 0; n < L; ++n) seg[n] = (series[start + n] - m) * window[n];
    fft.fwd(spec, seg);
    for (std::size_t k = 0; k <= L / 2; ++k) acc[k] += std::norm(spec[k]) / wss;
    ++segments;
  }
  SpectralDensity out;
  out.theta.resize(L / 2 + 1);
  out.values.resize(L / 2 + 1);
  for (std::size_t k = 0; k <= L / 2; ++k) {
    out.theta[k] = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(L);
    out.values[k] = acc[k] / static_cast<double>(segments);
  }
  return out;
}

/// (1 / 2 pi) * integral of a one-sided Welch estimate, using its symmetric extension.
inline double welch_variance(const SpectralDensity& one_sided) {
  const std::size_t n = one_sided.size();
  detail::require(n >= 2, "Welch estimate too short");
  const std::size_t L = 2 * (n - 1);
  double s = one_sided.values.front() + one_sided.values.back();
  for (std::size_t k = 1; k + 1 < n; ++k) s += 2.0 * one_sided.values[k];
  return s / static_cast<double>(L);
}

struct GaussianOverlay {
  std::vector<double> edges;     // bins + 1
  std::vector<double> density;   // normalised histogram
  std::vector<double> gaussian;  // pdf at bin centres
  double ks_distance = 0.0;
  std::uint64_t samples = 0;
};

inline constexpr std::size_t kMinOverlaySamples = 1000;

/// Histogram of `samples` against N(mean, variance) with the exact
/// Kolmogorov-Smirnov distance from the sorted sample.
inline GaussianOverlay gaussian_overlay(std::span<const double> samples, double mean, double variance,
                                        std::size_t bins = 100) {
  if (samples.size() < kMinOverlaySamples) throw InvalidArgument("too few samples for a Gaussian overlay");
  detail::require(variance > 0.0, "overlay variance must be positive");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double F = normal_cdf(sorted[i], mean, variance);
    ks = std::max({ks, std::abs(static_cast<double>(i + 1) / n - F), std::abs(static_cast<double>(i) / n - F)});
  }
  double lo = sorted.front(), hi = sorted.back();
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h(lo, std::nextafter(hi, std::numeric_limits<double>::infinity()), bins);
  for (double v : sorted) h.add(v);
  GaussianOverlay out;
  out.samples = sorted.size();
  out.ks_distance = ks;
  for (std::size_t k = 0; k <= bins; ++k) out.edges.push_back(h.edge(k));
  for (std::size_t k = 0; k < bins; ++k) {
    out.density.push_back(static_cast<double>(h.counts()[k]) / (n * h.width()));
    out.gaussian.push_back(normal_pdf(0.5 * (out.edges[k] + out.edges[k + 1]), mean, variance));
  }
  return out;
}

/// Overlay from a streamed histogram. The KS distance is evaluated at the
/// bin edges, so it is exact up to the probability mass of one bin.
inline GaussianOverlay gaussian_overlay(const Histogram& hist, double mean, double variance) {
  const double n = static_cast<double>(hist.total());
  if (hist.total() < kMinOverlaySamples) throw InvalidArgument("too few samples for a Gaussian overlay");
  detail::require(variance > 0.0, "overlay variance must be positive");
  GaussianOverlay out;
  out.samples = hist.total();
  double cum = static_cast<double>(hist.underflow());
  double ks = std::abs(cum / n - normal_cdf(hist.lo(), mean, variance));
  for (std::size_t k = 0; k < hist.bins(); ++k) {
    out.edges.push_back(hist.edge(k));
    const double c = static_cast<double>(hist.counts()[k]);
    out.density.push_back(c / (n * hist.width()));
    out.gaussian.push_back(normal_pdf(hist.edge(k) + 0.5 * hist.width(), mean, variance));
    cum += c;
    ks = std::max(ks, std::abs(cum / n - normal_cdf(hist.edge(k + 1), mean, variance)));
  }
  out.edges.push_back(hist.hi());
  out.ks_distance = ks;
  return out;
}

}  // namespace ddqos
