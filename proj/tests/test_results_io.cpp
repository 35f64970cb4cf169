#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ddqos/results_io.hpp"

using namespace ddqos;
namespace fs = std::filesystem;

namespace {

SimConfig small_config() {
  SimConfig c;
  c.population = 300;
  c.horizon = 1200;
  c.burn_in = 200;
  c.reference.scale = 0.0118;
  c.record.psd_segment = 256;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

const std::vector<std::string> kOutputs{"tracking.csv", "qos_hist.csv", "psd.csv", "summary.json", "config.toml"};

}  // namespace

TEST(Format, ShortestRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 10000; ++k) {
    const double v = u(rng) * std::pow(10.0, k % 20 - 10);
    ASSERT_EQ(std::stod(detail::fmt(v)), v);
  }
  EXPECT_EQ(detail::fmt(0.5), "0.5");
  EXPECT_EQ(detail::fmt(std::nan("")), "nan");
  EXPECT_EQ(detail::fmt(-INFINITY), "-inf");
  EXPECT_TRUE(detail::num(INFINITY).is_null());
}

TEST(Format, WelchSegment) {
  EXPECT_EQ(welch_segment_for(7, 1024), 0u);
  EXPECT_EQ(welch_segment_for(8, 1024), 4u);
  EXPECT_EQ(welch_segment_for(8640, 1024), 1024u);
  EXPECT_EQ(welch_segment_for(1500, 1024), 512u);
  EXPECT_EQ(welch_segment_for(1200, 256), 256u);
}

TEST(Emit, WritesAllFilesWithExpectedShapes) {
  const auto cfg = small_config();
  const auto dir = fresh_dir("ddqos_emit_shapes");
  emit_results(run_experiment(cfg), dir);
  for (const auto& f : kOutputs) EXPECT_TRUE(fs::exists(dir / f)) << f;

  const auto tracking = detail::read_csv(dir / "tracking.csv");
  ASSERT_EQ(tracking.size(), cfg.horizon + 1);
  EXPECT_EQ(tracking[0].size(), 9u);
  EXPECT_EQ(tracking[0][0], "epoch");

  const auto psd = detail::read_csv(dir / "psd.csv");
  EXPECT_EQ(psd.size(), 1 + 256 / 2 + 1);

  // Every recorded QoS sample lands in exactly one histogram row.
  const auto hist = detail::read_csv(dir / "qos_hist.csv");
  ASSERT_EQ(hist.size(), 1 + cfg.record.hist_bins + 2);
  std::uint64_t total = 0;
  double mass = 0.0;
  for (std::size_t i = 1; i < hist.size(); ++i) {
    total += std::stoull(hist[i][2]);
    if (i > 1 && i + 1 < hist.size()) mass += std::stod(hist[i][3]) * (std::stod(hist[i][1]) - std::stod(hist[i][0]));
  }
  EXPECT_EQ(total, cfg.population * cfg.horizon);
  EXPECT_LE(mass, 1.0 + 1e-9);
  EXPECT_GT(mass, 0.99);

  std::ifstream in(dir / "summary.json");
  const auto s = nlohmann::json::parse(in);
  EXPECT_EQ(s["population"], cfg.population);
  EXPECT_EQ(s["qos"]["samples"], cfg.population * cfg.horizon);
  EXPECT_TRUE(s["tracking"]["nrmse"].is_number());
  EXPECT_TRUE(s["qos"].contains("predicted_variance"));

  EXPECT_EQ(load_config((dir / "config.toml").string()), cfg);
  fs::remove_all(dir);
}

TEST(Emit, ByteIdenticalReruns) {
  auto cfg = small_config();
  cfg.cycling_enabled = true;
  cfg.cleaning.bounds = {-3.0, 3.0};
  cfg.cleaning.opt_out = true;
  cfg.reference.scale = 0.05;
  const auto a = fresh_dir("ddqos_emit_a");
  const auto b = fresh_dir("ddqos_emit_b");
  emit_results(run_experiment(cfg), a);
  emit_results(run_experiment(cfg), b);
  for (const auto& f : kOutputs) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Emit, ShortHorizonHasHeaderOnlyPsd) {
  auto cfg = small_config();
  cfg.horizon = 5;
  const auto dir = fresh_dir("ddqos_emit_short");
  emit_results(run_experiment(cfg), dir);
  EXPECT_EQ(detail::read_csv(dir / "psd.csv").size(), 1u);
  EXPECT_EQ(detail::read_csv(dir / "tracking.csv").size(), 6u);
  fs::remove_all(dir);
}

TEST(Emit, ZeroReferenceHasNullNrmse) {
  auto cfg = small_config();
  cfg.reference.epsilon = 0.0;
  const auto s = summary_json(run_experiment(cfg));
  EXPECT_TRUE(s["tracking"]["nrmse"].is_null());
}

TEST(Analyze, RoundTrip) {
  const auto cfg = small_config();
  const auto dir = fresh_dir("ddqos_analyze");
  const auto rep = run_experiment(cfg);
  emit_results(rep, dir);
  const auto a = analyze(dir);
  EXPECT_EQ(a.samples, rep.outcome.result.qos_moments.count());
  EXPECT_EQ(a.empirical_variance, rep.outcome.result.qos_moments.variance());
  ASSERT_TRUE(a.predicted_variance.has_value());
  EXPECT_EQ(*a.predicted_variance, rep.prediction->variance);
  ASSERT_TRUE(a.ks_predicted.has_value());
  const auto ks = gaussian_overlay(rep.outcome.result.qos_hist, rep.prediction->mean, rep.prediction->variance);
  EXPECT_NEAR(*a.ks_predicted, ks.ks_distance, 1e-12);
  EXPECT_TRUE(std::isfinite(a.ks_empirical));
  const auto j = analysis_json(a);
  EXPECT_EQ(j["samples"], a.samples);
  fs::remove_all(dir);
}

TEST(Analyze, MissingOrBrokenDirectory) {
  EXPECT_THROW(analyze("/no/such/run"), Error);
  const auto dir = fresh_dir("ddqos_analyze_broken");
  fs::create_directories(dir);
  { std::ofstream(dir / "summary.json") << "{not json"; }
  EXPECT_THROW(analyze(dir), Error);
  { std::ofstream(dir / "summary.json") << "{}"; }
  EXPECT_THROW(analyze(dir), Error);
  fs::remove_all(dir);
}
