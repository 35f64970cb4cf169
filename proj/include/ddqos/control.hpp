#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ddqos/errors.hpp"
#include "ddqos/mean_field.hpp"

namespace ddqos {

struct PiGains {
  double kp = 50.0;
  double ki = 1.5;
  double zeta_max = 1.0;
};

/// Discrete PI law zeta_t = kp e_t + ki (sum_{s<=t} e_s), saturated at
/// +-zeta_max with conditional integration.
class PiController {
 public:
  explicit PiController(PiGains gains = {}) : gains_(gains) {
    detail::require(gains.zeta_max > 0.0, "saturation bound must be positive");
  }

  double step(double error) {
    detail::require(std::isfinite(error), "tracking error must be finite");
    const double raw = gains_.kp * error + gains_.ki * (integral_ + error);
    if (std::abs(raw) <= gains_.zeta_max) {
      integral_ += error;
      return raw;
    }
    ++saturations_;
    return std::clamp(raw, -gains_.zeta_max, gains_.zeta_max);
  }

  [[nodiscard]] double integral() const { return integral_; }
  [[nodiscard]] long saturation_count() const { return saturations_; }
  [[nodiscard]] const PiGains& gains() const { return gains_; }

 private:
  PiGains gains_;
  double integral_ = 0.0;
  long saturations_ = 0;
};

inline double control_step(PiController& controller, double error) { return controller.step(error); }

/// Single-input single-output discrete state-space system
///   s_{t+1} = A s_t + B u_t,   y_t = C s_t + D u_t.
struct StateSpace {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  Eigen::RowVectorXd C;
  double D = 0.0;

  [[nodiscard]] std::complex<double> frequency_response(double theta) const {
    const Eigen::Index n = A.rows();
    if (n == 0) return D;
    const std::complex<double> z = std::polar(1.0, theta);
    Eigen::MatrixXcd M = z * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    const Eigen::VectorXcd x = M.partialPivLu().solve(B.cast<std::complex<double>>());
    return (C.cast<std::complex<double>>() * x)(0) + D;
  }

  [[nodiscard]] Eigen::VectorXcd poles() const { return A.eigenvalues(); }

  [[nodiscard]] double spectral_radius() const {
    if (A.rows() == 0) return 0.0;
    return poles().cwiseAbs().maxCoeff();
  }

  /// Response to `input` from the zero state.
  [[nodiscard]] std::vector<double> simulate(std::span<const double> input) const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(A.rows());
    std::vector<double> out;
    out.reserve(input.size());
    for (double u : input) {
      out.push_back(C.dot(s) + D * u);
      s = A * s + B * u;
    }
    return out;
  }
};

/// Realisation of the unsaturated PI law, state = running error sum.
inline StateSpace pi_realization(const PiGains& g) {
  StateSpace ss;
  ss.A = Eigen::MatrixXd::Ones(1, 1);
  ss.B = Eigen::VectorXd::Ones(1);
  ss.C = Eigen::RowVectorXd::Constant(1, g.ki);
  ss.D = g.kp + g.ki;
  return ss;
}

struct ClosedLoopOptions {
  bool require_stable = true;
};

/// Map r -> zeta, i.e. G_c / (1 + G_c G_p), with measurement taken before
/// actuation in each epoch. The plant state is restricted to the zero-sum
/// subspace so the conserved total-mass mode does not appear as a pole at 1.
inline StateSpace closed_loop_map(const LinearMfm& plant, const PiGains& g,
                                  const ClosedLoopOptions& opt = {}) {
  const Eigen::Index d = plant.A.rows();
  const double k0 = g.kp + g.ki;
  StateSpace ss;
  ss.A = Eigen::MatrixXd::Zero(d + 1, d + 1);
  ss.A.topLeftCorner(d, d) = plant.deflated_A() - k0 * plant.B * plant.C;
  ss.A.topRightCorner(d, 1) = g.ki * plant.B;
  ss.A.bottomLeftCorner(1, d) = -plant.C;
  ss.A(d, d) = 1.0;
  ss.B = Eigen::VectorXd::Zero(d + 1);
  ss.B.head(d) = k0 * plant.B;
  ss.B(d) = 1.0;
  ss.C = Eigen::RowVectorXd::Zero(d + 1);
  ss.C.head(d) = -k0 * plant.C;
  ss.C(d) = g.ki;
  ss.D = k0;
  // An integrator pole computed as 1 - 1e-16 still counts as marginal.
  if (opt.require_stable && ss.spectral_radius() >= 1.0 - 1e-12)
    throw UnstableLoop("closed-loop pole on or outside the unit circle");
  return ss;
}

}  // namespace ddqos
