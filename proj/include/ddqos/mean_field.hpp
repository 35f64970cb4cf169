#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ddqos/errors.hpp"
#include "ddqos/load_model.hpp"

namespace ddqos {

/// Probability mass function over the d load states (row vector).
class Pmf {
 public:
  explicit Pmf(Eigen::RowVectorXd weights, double tolerance = 1e-9) : w_(std::move(weights)) {
    if (w_.size() == 0) throw InvalidArgument("pmf must be non-empty");
    if ((w_.array() < -tolerance).any()) throw InvalidArgument("pmf has a negative weight");
    if (std::abs(w_.sum() - 1.0) > tolerance) throw InvalidArgument("pmf does not sum to one");
  }

  static Pmf point_mass(Eigen::Index dimension, Eigen::Index at) {
    Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(dimension);
    w(at) = 1.0;
    return Pmf(std::move(w));
  }

  [[nodiscard]] const Eigen::RowVectorXd& weights() const { return w_; }
  [[nodiscard]] Eigen::Index size() const { return w_.size(); }
  [[nodiscard]] double operator()(Eigen::Index i) const { return w_(i); }

 private:
  Eigen::RowVectorXd w_;
};

/// One mean-field step mu' = mu P.
inline Pmf evolve(const Pmf& mu, const Eigen::MatrixXd& P) {
  if (P.rows() != mu.size() || P.cols() != mu.size())
    throw DimensionMismatch("pmf and transition matrix dimensions differ");
  return Pmf(mu.weights() * P);
}

struct StationaryOptions {
  Eigen::Index direct_solve_limit = 2000;
  int max_iterations = 1'000'000;
  double tolerance = 1e-10;
};

/// Invariant pmf of an irreducible aperiodic chain.
inline Pmf stationary_pmf(const Eigen::MatrixXd& P, const StationaryOptions& opt = {}) {
  const Eigen::Index d = P.rows();
  if (d == 0 || P.cols() != d) throw DimensionMismatch("transition matrix must be square");
  Eigen::RowVectorXd pi;
  if (d <= opt.direct_solve_limit) {
    // (I - P^T) pi^T = 0 with the last balance equation replaced by normalisation.
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(d, d) - P.transpose();
    A.row(d - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    rhs(d - 1) = 1.0;
    pi = A.fullPivLu().solve(rhs).transpose();
  } else {
    pi = Eigen::RowVectorXd::Constant(d, 1.0 / static_cast<double>(d));
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
      Eigen::RowVectorXd next = pi * P;
      next /= next.sum();
      const double change = (next - pi).lpNorm<1>();
      pi = std::move(next);
      if (change < opt.tolerance) break;
    }
    if (it == opt.max_iterations) throw NumericalFailure("stationary pmf power iteration did not converge");
  }
  const double residual = (pi * P - pi).lpNorm<1>();
  if (!std::isfinite(residual) || residual > opt.tolerance)
    throw NumericalFailure("stationary pmf residual exceeds tolerance; matrix may be defective");
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  return Pmf(std::move(pi));
}

/// y = sum_x mu(x) U(x).
inline double aggregate_output(const Pmf& mu, const Eigen::VectorXd& utility) {
  if (utility.size() != mu.size()) throw DimensionMismatch("utility length differs from pmf");
  return mu.weights().dot(utility.transpose());
}

/// Empirical distribution of a population of state indices.
inline Pmf empirical_pmf(std::span<const int> state_indices, Eigen::Index dimension) {
  if (state_indices.empty()) throw InvalidArgument("empty population");
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(dimension);
  for (int x : state_indices) {
    if (x < 0 || x >= dimension) throw InvalidArgument("state index out of range");
    w(x) += 1.0;
  }
  w /= static_cast<double>(state_indices.size());
  return Pmf(std::move(w));
}

inline Pmf empirical_pmf(const TransitionModel& model, std::span<const LoadState> states) {
  std::vector<int> idx;
  idx.reserve(states.size());
  for (const auto& s : states) idx.push_back(model.index(s));
  return empirical_pmf(idx, model.dimension());
}

/// Linearisation of the mean-field model about pi0:
///   Phi_{t+1} = A Phi_t + B zeta_t,  gamma_t = C Phi_t.
struct LinearMfm {
  Eigen::MatrixXd A;       // P0^T
  Eigen::VectorXd B;       // B_j = sum_x pi0(x) E(x, j)
  Eigen::RowVectorXd C;    // utility
  double nominal_output;   // ybar0
  Eigen::RowVectorXd pi0;

  /// A with the Perron direction removed. Agrees with A on the zero-sum
  /// subspace, where every trajectory started from Phi = 0 stays.
  [[nodiscard]] Eigen::MatrixXd deflated_A() const {
    return A - pi0.transpose() * Eigen::RowVectorXd::Ones(A.cols());
  }

  /// Plant frequency response zeta -> gamma at z = exp(j theta).
  [[nodiscard]] std::complex<double> frequency_response(double theta) const {
    const Eigen::Index d = A.rows();
    const std::complex<double> z = std::polar(1.0, theta);
    Eigen::MatrixXcd M = z * Eigen::MatrixXcd::Identity(d, d) - deflated_A().cast<std::complex<double>>();
    Eigen::VectorXcd x = M.partialPivLu().solve(B.cast<std::complex<double>>());
    return (C.cast<std::complex<double>>() * x)(0);
  }
};

inline LinearMfm linearize(const TransitionModel& model) {
  const Pmf pi0 = stationary_pmf(model.nominal());
  const auto deriv = derivative_matrices(model);
  LinearMfm lin;
  lin.A = model.nominal().transpose();
  lin.B = (pi0.weights() * deriv.first).transpose();
  lin.C = model.utility().transpose();
  lin.nominal_output = aggregate_output(pi0, model.utility());
  lin.pi0 = pi0.weights();
  return lin;
}

}  // namespace ddqos
