#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddqos/errors.hpp"

namespace ddqos {

enum class Mode : std::uint8_t { Off, On };

/// Position of one load: operating mode plus the number of sampling epochs
/// spent in that mode, saturating at the model's sojourn cap.
struct LoadState {
  Mode mode = Mode::Off;
  int sojourn = 1;

  friend bool operator==(const LoadState&, const LoadState&) = default;
};

inline Mode opposite(Mode mode) { return mode == Mode::On ? Mode::Off : Mode::On; }

/// Finite-state load with a nominal chain and an exponentially tilted
/// family of controlled transition matrices.
///
/// States are indexed On first: (On, j) -> j - 1 and (Off, j) -> I + j - 1.
class TransitionModel {
 public:
  TransitionModel(int sojourn_states, Eigen::MatrixXd nominal, Eigen::VectorXd utility,
                  Eigen::VectorXd tilt_exponent)
      : sojourn_states_(sojourn_states),
        nominal_(std::move(nominal)),
        utility_(std::move(utility)),
        tilt_(std::move(tilt_exponent)) {
    detail::require(sojourn_states_ >= 1, "sojourn state count must be positive");
    const auto d = dimension();
    if (nominal_.rows() != d || nominal_.cols() != d || utility_.size() != d || tilt_.size() != d)
      throw DimensionMismatch("transition model arrays must have dimension 2*I");
    for (Eigen::Index x = 0; x < d; ++x) {
      if ((nominal_.row(x).array() < 0.0).any())
        throw InvalidArgument("nominal matrix has a negative entry");
      if (std::abs(nominal_.row(x).sum() - 1.0) > 1e-12)
        throw InvalidArgument("nominal matrix row does not sum to one");
    }
    successors_.resize(static_cast<std::size_t>(d));
    for (Eigen::Index x = 0; x < d; ++x)
      for (Eigen::Index y = 0; y < d; ++y)
        if (nominal_(x, y) > 0.0) successors_[static_cast<std::size_t>(x)].push_back(static_cast<int>(y));
  }

  [[nodiscard]] int sojourn_states() const { return sojourn_states_; }
  [[nodiscard]] Eigen::Index dimension() const { return 2 * static_cast<Eigen::Index>(sojourn_states_); }
  [[nodiscard]] const Eigen::MatrixXd& nominal() const { return nominal_; }
  [[nodiscard]] const Eigen::VectorXd& utility() const { return utility_; }
  [[nodiscard]] const Eigen::VectorXd& tilt_exponent() const { return tilt_; }

  /// Column indices with positive nominal probability from row `x`.
  [[nodiscard]] const std::vector<int>& successors(int x) const {
    return successors_[static_cast<std::size_t>(x)];
  }

  [[nodiscard]] int index(const LoadState& s) const {
    detail::require(s.sojourn >= 1 && s.sojourn <= sojourn_states_, "sojourn index out of range");
    return (s.mode == Mode::On ? 0 : sojourn_states_) + s.sojourn - 1;
  }

  [[nodiscard]] LoadState state(int idx) const {
    detail::require(idx >= 0 && idx < dimension(), "state index out of range");
    if (idx < sojourn_states_) return {Mode::On, idx + 1};
    return {Mode::Off, idx - sojourn_states_ + 1};
  }

  /// Successor reached by staying in `mode` (sojourn advances, saturating)
  /// or by switching into it (sojourn resets).
  [[nodiscard]] LoadState continuation(const LoadState& from, Mode mode) const {
    if (from.mode == mode) return {mode, std::min(from.sojourn + 1, sojourn_states_)};
    return {mode, 1};
  }

  [[nodiscard]] double utility(const LoadState& s) const { return utility_(index(s)); }

 private:
  int sojourn_states_;
  Eigen::MatrixXd nominal_;
  Eigen::VectorXd utility_;
  Eigen::VectorXd tilt_;
  std::vector<std::vector<int>> successors_;
};

/// Pool-pump chain: On/Off alternation with a constant switching hazard
/// `sampling_period / (mean_cycle_hours * 60)` per epoch. Consumes 1 kW while On.
inline TransitionModel build_pool_nominal(int sojourn_states, double sampling_period_min,
                                          double mean_cycle_hours) {
  if (sojourn_states < 2) throw InvalidArgument("pool model needs at least 2 sojourn states");
  if (!(sampling_period_min > 0.0) || !(mean_cycle_hours > 0.0))
    throw InvalidArgument("sampling period and mean cycle must be positive");
  const double hazard = sampling_period_min / (mean_cycle_hours * 60.0);
  if (hazard >= 1.0) throw InvalidArgument("switching hazard must be below one per epoch");

  const int I = sojourn_states;
  const Eigen::Index d = 2 * I;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd utility = Eigen::VectorXd::Zero(d);
  auto idx = [I](Mode m, int j) { return (m == Mode::On ? 0 : I) + j - 1; };
  for (Mode m : {Mode::On, Mode::Off}) {
    for (int j = 1; j <= I; ++j) {
      const int from = idx(m, j);
      P(from, idx(m, std::min(j + 1, I))) += 1.0 - hazard;
      P(from, idx(opposite(m), 1)) += hazard;
      if (m == Mode::On) utility(from) = 1.0;
    }
  }
  Eigen::VectorXd tilt = utility;
  return TransitionModel(I, std::move(P), std::move(utility), std::move(tilt));
}

/// Controlled matrix P_zeta(x, y) = P0(x, y) exp(zeta * tilt(y)) / Z(x, zeta).
inline Eigen::MatrixXd transition_matrix(const TransitionModel& model, double zeta) {
  const auto& P0 = model.nominal();
  if (zeta == 0.0) return P0;
  const Eigen::ArrayXd weight = (zeta * model.tilt_exponent().array()).exp();
  Eigen::MatrixXd P = P0.array().rowwise() * weight.transpose();
  for (Eigen::Index x = 0; x < P.rows(); ++x) P.row(x) /= P.row(x).sum();
  return P;
}

struct DerivativeMatrices {
  Eigen::MatrixXd first;   // dP/dzeta at zero
  Eigen::MatrixXd second;  // d2P/dzeta2 at zero
};

/// Closed-form derivatives of the tilting rule at zeta = 0.
inline DerivativeMatrices derivative_matrices(const TransitionModel& model) {
  const auto& P0 = model.nominal();
  const auto& u = model.tilt_exponent();
  const Eigen::Index d = P0.rows();
  DerivativeMatrices out{Eigen::MatrixXd::Zero(d, d), Eigen::MatrixXd::Zero(d, d)};
  for (Eigen::Index x = 0; x < d; ++x) {
    const double m1 = P0.row(x).dot(u);
    const double m2 = P0.row(x).dot(u.cwiseProduct(u));
    const double var = m2 - m1 * m1;
    for (Eigen::Index y = 0; y < d; ++y) {
      const double c = u(y) - m1;
      out.first(x, y) = P0(x, y) * c;
      out.second(x, y) = P0(x, y) * (c * c - var);
    }
  }
  return out;
}

/// Draws the next state from row P_zeta(state, .).
template <class Rng>
LoadState sample_step(const TransitionModel& model, const LoadState& state, double zeta, Rng& rng) {
  const int x = model.index(state);
  const auto& succ = model.successors(x);
  double total = 0.0;
  std::vector<double> w(succ.size());
  for (std::size_t k = 0; k < succ.size(); ++k) {
    w[k] = model.nominal()(x, succ[k]) * std::exp(zeta * model.tilt_exponent()(succ[k]));
    total += w[k];
  }
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < succ.size(); ++k) {
    acc += w[k];
    if (u < acc) return model.state(succ[k]);
  }
  return model.state(succ.back());
}

/// Row-wise cumulative tilted kernel for one value of zeta; used to step a
/// whole population in one epoch without recomputing the normalisation.
class TiltedKernel {
 public:
  TiltedKernel(const TransitionModel& model, double zeta) : model_(&model) { reset(zeta); }

  void reset(double zeta) {
    const auto d = static_cast<std::size_t>(model_->dimension());
    cumulative_.resize(d);
    for (std::size_t x = 0; x < d; ++x) {
      const auto& succ = model_->successors(static_cast<int>(x));
      auto& cum = cumulative_[x];
      cum.resize(succ.size());
      double acc = 0.0;
      for (std::size_t k = 0; k < succ.size(); ++k) {
        acc += model_->nominal()(static_cast<Eigen::Index>(x), succ[k]) *
               std::exp(zeta * model_->tilt_exponent()(succ[k]));
        cum[k] = acc;
      }
      for (double& c : cum) c /= acc;
    }
  }

  /// Successor index for a uniform draw `u` in [0, 1).
  [[nodiscard]] int next(int x, double u) const {
    const auto& cum = cumulative_[static_cast<std::size_t>(x)];
    const auto& succ = model_->successors(x);
    for (std::size_t k = 0; k + 1 < cum.size(); ++k)
      if (u < cum[k]) return succ[k];
    return succ.back();
  }

 private:
  const TransitionModel* model_;
  std::vector<std::vector<double>> cumulative_;
};

/// Irreducible and aperiodic: some power of the positivity pattern is full.
inline bool is_primitive(const Eigen::MatrixXd& P) {
  const Eigen::Index d = P.rows();
  if (d == 0 || P.cols() != d) return false;
  Eigen::MatrixXd pattern = (P.array() > 0.0).cast<double>();
  // Wielandt bound: exponent (d - 1)^2 + 1 suffices for primitive matrices.
  const double bound = static_cast<double>((d - 1) * (d - 1) + 1);
  double exponent = 1.0;
  while (exponent < bound) {
    pattern = ((pattern * pattern).array() > 0.0).cast<double>();
    exponent *= 2.0;
  }
  return (pattern.array() > 0.0).all();
}

/// Irreducibility alone, via positivity of (P + I)^(d-1).
inline bool is_irreducible(const Eigen::MatrixXd& P) {
  const Eigen::Index d = P.rows();
  Eigen::MatrixXd pattern =
      ((P + Eigen::MatrixXd::Identity(d, d)).array() > 0.0).cast<double>();
  for (Eigen::Index reach = 1; reach < d; reach *= 2)
    pattern = ((pattern * pattern).array() > 0.0).cast<double>();
  return (pattern.array() > 0.0).all();
}

}  // namespace ddqos
