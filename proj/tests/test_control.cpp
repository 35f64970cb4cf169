#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ddqos/control.hpp"

using namespace ddqos;

namespace {

const LinearMfm& pool_plant() {
  static const LinearMfm lin = linearize(build_pool_nominal(12, 5.0, 12.0));
  return lin;
}

// Time-domain closed loop of the linear plant and an unsaturated PI law,
// written directly from the epoch order: measure, control, actuate.
std::vector<double> loop_oracle(const LinearMfm& plant, const PiGains& g, const std::vector<double>& r) {
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(plant.A.rows());
  double integral = 0.0;
  std::vector<double> zeta;
  for (double rt : r) {
    const double y = plant.C.dot(phi);
    const double e = rt - y;
    integral += e;
    const double z = g.kp * e + g.ki * integral;
    zeta.push_back(z);
    phi = plant.A * phi + plant.B * z;
  }
  return zeta;
}

}  // namespace

TEST(Pi, ZeroErrorGivesZero) {
  PiController c;
  for (int k = 0; k < 100; ++k) EXPECT_EQ(control_step(c, 0.0), 0.0);
}

TEST(Pi, DefaultGains) {
  const PiGains g;
  EXPECT_EQ(g.kp, 50.0);
  EXPECT_EQ(g.ki, 1.5);
  EXPECT_EQ(g.zeta_max, 1.0);
}

TEST(Pi, FirstOutputHandValue) {
  PiController c;
  EXPECT_NEAR(control_step(c, 0.001), 0.0515, 1e-15);
  EXPECT_NEAR(control_step(c, 0.001), 0.05 + 1.5 * 0.002, 1e-15);
}

TEST(Pi, SaturationAndAntiWindup) {
  PiController c;
  EXPECT_EQ(control_step(c, 1.0), 1.0);
  EXPECT_EQ(c.integral(), 0.0);  // frozen while saturated
  EXPECT_EQ(control_step(c, -1.0), -1.0);
  EXPECT_EQ(c.saturation_count(), 2);
  EXPECT_NEAR(control_step(c, 0.0), 0.0, 1e-15);
}

TEST(Pi, OutputAlwaysBounded) {
  PiController c({50.0, 1.5, 0.7});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int k = 0; k < 100000; ++k) {
    const double z = control_step(c, n(rng));
    ASSERT_LE(std::abs(z), 0.7);
    ASSERT_TRUE(std::isfinite(c.integral()));
  }
}

TEST(Pi, ZeroErrorHoldsIntegralLevel) {
  PiController c;
  for (int k = 0; k < 5; ++k) control_step(c, 0.002);
  const double level = 1.5 * c.integral();
  for (int k = 0; k < 20; ++k) EXPECT_NEAR(control_step(c, 0.0), level, 1e-15);
}

TEST(Pi, RejectsBadInput) {
  EXPECT_THROW(PiController({50.0, 1.5, 0.0}), InvalidArgument);
  PiController c;
  EXPECT_THROW(control_step(c, std::nan("")), InvalidArgument);
}

TEST(Pi, MatchesRealization) {
  const PiGains g;
  const auto ss = pi_realization(g);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1e-3);
  std::vector<double> e(2000);
  for (double& v : e) v = n(rng);
  const auto sim = ss.simulate(e);
  PiController c(g);
  for (std::size_t t = 0; t < e.size(); ++t) ASSERT_NEAR(control_step(c, e[t]), sim[t], 1e-10);
  EXPECT_EQ(c.saturation_count(), 0);
}

TEST(ClosedLoop, OpenLoopReducesToController) {
  LinearMfm zero = pool_plant();
  zero.B.setZero();
  const PiGains g;
  const auto loop = closed_loop_map(zero, g, {.require_stable = false});
  const auto pi = pi_realization(g);
  for (double th : {0.01, 0.3, 1.0, 3.0})
    EXPECT_NEAR(std::abs(loop.frequency_response(th) - pi.frequency_response(th)), 0.0, 1e-9);
  EXPECT_THROW(closed_loop_map(zero, g), UnstableLoop);
}

TEST(ClosedLoop, PoolPolesInsideUnitCircle) {
  const auto loop = closed_loop_map(pool_plant(), PiGains{});
  EXPECT_LT(loop.spectral_radius(), 1.0);
}

TEST(ClosedLoop, MatchesTimeDomainOracle) {
  const PiGains g;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1e-3);
  std::vector<double> r(3000);
  for (double& v : r) v = n(rng);
  const auto loop = closed_loop_map(pool_plant(), g);
  const auto a = loop.simulate(r);
  const auto b = loop_oracle(pool_plant(), g, r);
  for (std::size_t t = 0; t < r.size(); ++t) ASSERT_NEAR(a[t], b[t], 1e-10);
}

TEST(ClosedLoop, DcResponseMatchesLongSimulation) {
  const PiGains g;
  const auto loop = closed_loop_map(pool_plant(), g);
  const std::vector<double> r(200000, 1e-3);
  const auto z = loop_oracle(pool_plant(), g, r);
  // Integral action drives the error to zero, so zeta settles at r / G_p(1).
  const double dc = loop.frequency_response(0.0).real();
  EXPECT_NEAR(z.back(), dc * 1e-3, 1e-6);
  EXPECT_NEAR(dc, 1.0 / pool_plant().frequency_response(0.0).real(), 1e-6 * std::abs(dc));
}

TEST(ClosedLoop, FrequencyResponseIsFeedbackFormula) {
  const PiGains g;
  const auto loop = closed_loop_map(pool_plant(), g);
  const auto pi = pi_realization(g);
  for (double th : {0.002, 0.05, 0.5, 2.0}) {
    const auto Gc = pi.frequency_response(th);
    // Measurement precedes actuation: the plant seen by the controller has a one-epoch delay.
    const auto Gp = pool_plant().frequency_response(th);
    const auto expect = Gc / (1.0 + Gc * Gp);
    EXPECT_NEAR(std::abs(loop.frequency_response(th) - expect), 0.0, 1e-8 * std::abs(expect));
  }
}
