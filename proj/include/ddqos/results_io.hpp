#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddqos/errors.hpp"
#include "ddqos/experiments.hpp"
#include "ddqos/sim_config.hpp"
#include "ddqos/simulation.hpp"
#include "ddqos/spectral.hpp"
#include "ddqos/statistics.hpp"

namespace ddqos {

namespace detail {

/// Shortest representation that reads back to the same double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline nlohmann::json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

/// Largest power of two not above n/2, capped at `wanted`; 0 if too short.
inline std::size_t welch_segment_for(std::size_t n, std::size_t wanted) {
  std::size_t L = 4;
  if (n < 2 * L) return 0;
  while (2 * L <= wanted && 2 * (2 * L) <= n) L *= 2;
  return L;
}

struct RunReport {
  RunOutcome outcome;
  std::optional<QosPrediction> prediction;
};

/// Runs `cfg` with its baseline and the analytic QoS prediction.
inline RunReport run_experiment(const SimConfig& cfg) {
  RunReport rep{run_with_baseline(cfg), std::nullopt};
  rep.prediction = predict_cleaning_qos(cfg);
  return rep;
}

inline nlohmann::json summary_json(const RunReport& rep) {
  const auto& res = rep.outcome.result;
  const auto& S = res.series;
  const auto& cfg = res.config;
  const double N = static_cast<double>(cfg.population);
  nlohmann::json j;
  j["population"] = cfg.population;
  j["horizon"] = res.horizon();
  j["burn_in"] = cfg.burn_in;
  j["seed"] = cfg.seed;
  j["epsilon"] = cfg.reference.epsilon;

  nlohmann::json track;
  if (res.horizon() > 0) {
    track["rms_reference"] = rms(S.reference);
    track["rms_error"] = rms(S.error);
    track["rms_error_kw"] = rms(S.error) * N;
    track["rms_output"] = rms(S.output);
    if (rep.outcome.baseline) {
      track["rms_error_nominal"] = rms(rep.outcome.baseline->series.error);
      track["rms_error_nominal_kw"] = rms(rep.outcome.baseline->series.error) * N;
    }
    track["nrmse"] = detail::num(rep.outcome.nrmse);
    if (res.horizon() > 2) track["corr_qos_mean_soc"] = detail::num(correlation(S.qos_mean, S.soc));
  }
  track["saturations"] = res.saturations;
  track["total_optouts"] = res.total_optouts;
  track["max_optout_fraction"] = res.max_optout_fraction;
  j["tracking"] = track;

  nlohmann::json q;
  q["samples"] = res.qos_moments.count();
  q["mean"] = res.qos_moments.mean();
  q["variance"] = res.qos_moments.variance();
  q["min"] = detail::num(res.qos_moments.min());
  q["max"] = detail::num(res.qos_moments.max());
  q["lower_bound"] = detail::num(cfg.cleaning.bounds.lower);
  q["upper_bound"] = detail::num(cfg.cleaning.bounds.upper);
  q["out_of_bounds"] = res.qos_out_of_bounds;
  q["hist_underflow"] = res.qos_hist.underflow();
  q["hist_overflow"] = res.qos_hist.overflow();
  if (rep.prediction) {
    const auto& p = *rep.prediction;
    q["predicted_mean"] = p.mean;
    q["predicted_variance"] = p.variance;
    q["predicted_nominal_variance"] = p.nominal_variance;
    q["predicted_second_order"] = p.second_order;
    q["grid_points"] = p.grid_points;
    if (res.qos_hist.total() >= kMinOverlaySamples && p.variance > 0.0)
      q["ks_distance"] = gaussian_overlay(res.qos_hist, p.mean, p.variance).ks_distance;
  }
  j["qos"] = q;

  if (cfg.cycling_enabled) {
    nlohmann::json c;
    c["samples"] = res.cycling_moments.count();
    c["mean"] = res.cycling_moments.mean();
    c["variance"] = res.cycling_moments.variance();
    c["upper_bound"] = detail::num(cfg.cycling.bounds.upper);
    c["out_of_bounds"] = res.cycling_out_of_bounds;
    j["cycling"] = c;
  }
  if (!S.mean_field_gap.empty()) j["mean_field_gap"] = mean_of(S.mean_field_gap);
  return j;
}

/// Writes tracking.csv, qos_hist.csv, psd.csv, summary.json and config.toml.
inline void emit_results(const RunReport& rep, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const auto& res = rep.outcome.result;
  const auto& S = res.series;
  const auto& cfg = res.config;
  using detail::fmt;

  {
    auto out = detail::open_out(out_dir / "tracking.csv");
    out << "epoch,r,r_shaped,y,zeta,e,optout_count,qos_mean,R";
    if (cfg.cycling_enabled) out << ",cycling_mean";
    out << "\n";
    for (std::size_t t = 0; t < res.horizon(); ++t) {
      out << t << ',' << fmt(S.reference[t]) << ',' << fmt(S.shaped[t]) << ',' << fmt(S.output[t]) << ','
          << fmt(S.zeta[t]) << ',' << fmt(S.error[t]) << ',' << S.optouts[t] << ',' << fmt(S.qos_mean[t]) << ','
          << fmt(S.soc[t]);
      if (cfg.cycling_enabled) out << ',' << fmt(S.cycling_mean[t]);
      out << "\n";
    }
  }

  {
    const auto& h = res.qos_hist;
    const double n = static_cast<double>(h.total());
    double mean = res.qos_moments.mean(), var = res.qos_moments.variance();
    if (rep.prediction) {
      mean = rep.prediction->mean;
      var = rep.prediction->variance;
    }
    auto gauss = [&](double x) { return var > 0.0 ? normal_pdf(x, mean, var) : 0.0; };
    auto out = detail::open_out(out_dir / "qos_hist.csv");
    out << "bin_lo,bin_hi,count,density,gaussian\n";
    out << "-inf," << fmt(h.lo()) << ',' << h.underflow() << ",0,0\n";
    for (std::size_t k = 0; k < h.bins(); ++k) {
      const double lo = h.edge(k), hi = h.edge(k + 1);
      const double c = static_cast<double>(h.counts()[k]);
      out << fmt(lo) << ',' << fmt(hi) << ',' << h.counts()[k] << ',' << fmt(n > 0 ? c / (n * h.width()) : 0.0)
          << ',' << fmt(gauss(0.5 * (lo + hi))) << "\n";
    }
    out << fmt(h.hi()) << ",inf," << h.overflow() << ",0,0\n";
  }

  {
    auto out = detail::open_out(out_dir / "psd.csv");
    out << "theta,r_welch,zeta_welch,y_welch,r_model,zeta_model\n";
    const std::size_t L = welch_segment_for(res.horizon(), cfg.record.psd_segment);
    if (L > 0) {
      const auto r_w = welch_psd(S.shaped, L, L / 2);
      const auto z_w = welch_psd(S.zeta, L, L / 2);
      const auto y_w = welch_psd(S.output, L, L / 2);
      const double eps = cfg.reference.epsilon;
      const auto r_m = reference_psd(reference_arma(cfg), cfg.lowpass(), eps * cfg.reference.scale, r_w.theta);
      const auto z_m = input_psd(closed_loop_map(linearize(cfg.model()), cfg.gains), r_m);
      for (std::size_t k = 0; k < r_w.size(); ++k)
        out << fmt(r_w.theta[k]) << ',' << fmt(r_w.values[k]) << ',' << fmt(z_w.values[k]) << ','
            << fmt(y_w.values[k]) << ',' << fmt(r_m.values[k]) << ',' << fmt(z_m.values[k]) << "\n";
    }
  }

  {
    auto out = detail::open_out(out_dir / "summary.json");
    out << summary_json(rep).dump(2) << "\n";
  }
  {
    auto out = detail::open_out(out_dir / "config.toml");
    out << write_config(cfg);
  }
}

struct Analysis {
  std::uint64_t samples = 0;
  double empirical_mean = 0.0;
  double empirical_variance = 0.0;
  std::optional<double> predicted_mean;
  std::optional<double> predicted_variance;
  std::optional<double> variance_relative_error;
  std::optional<double> ks_predicted;
  double ks_empirical = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t out_of_bounds = 0;
};

/// Re-reads a run directory and compares the QoS histogram with Gaussians
/// built from the analytic and from the empirical moments.
inline Analysis analyze(const std::filesystem::path& dir) {
  const auto summary_path = dir / "summary.json";
  std::ifstream in(summary_path);
  if (!in) throw Error("missing " + summary_path.string());
  nlohmann::json s;
  try {
    in >> s;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed " + summary_path.string() + ": " + e.what());
  }
  const auto rows = detail::read_csv(dir / "qos_hist.csv");
  if (rows.size() < 3) throw Error("qos_hist.csv has no bins");
  std::vector<std::uint64_t> counts;
  double lo = 0.0, hi = 0.0;
  std::uint64_t under = 0, over = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() < 3) throw Error("malformed row in qos_hist.csv");
    const std::uint64_t c = std::stoull(r[2]);
    if (i == 1) {
      under = c;
      lo = std::stod(r[1]);
    } else if (i + 1 == rows.size()) {
      over = c;
      hi = std::stod(r[0]);
    } else {
      counts.push_back(c);
    }
  }
  Histogram h(lo, hi, counts.size());
  h.assign(std::move(counts), under, over);

  const auto& q = s.at("qos");
  Analysis a;
  a.samples = h.total();
  a.empirical_mean = q.at("mean").get<double>();
  a.empirical_variance = q.at("variance").get<double>();
  a.out_of_bounds = q.at("out_of_bounds").get<std::uint64_t>();
  if (a.samples >= kMinOverlaySamples && a.empirical_variance > 0.0)
    a.ks_empirical = gaussian_overlay(h, a.empirical_mean, a.empirical_variance).ks_distance;
  if (q.contains("predicted_variance")) {
    a.predicted_mean = q.at("predicted_mean").get<double>();
    a.predicted_variance = q.at("predicted_variance").get<double>();
    if (*a.predicted_variance > 0.0) {
      a.variance_relative_error = (a.empirical_variance - *a.predicted_variance) / *a.predicted_variance;
      if (a.samples >= kMinOverlaySamples)
        a.ks_predicted = gaussian_overlay(h, *a.predicted_mean, *a.predicted_variance).ks_distance;
    }
  }
  return a;
}

inline nlohmann::json analysis_json(const Analysis& a) {
  nlohmann::json j;
  j["samples"] = a.samples;
  j["empirical_mean"] = a.empirical_mean;
  j["empirical_variance"] = a.empirical_variance;
  j["ks_empirical"] = detail::num(a.ks_empirical);
  j["out_of_bounds"] = a.out_of_bounds;
  if (a.predicted_mean) j["predicted_mean"] = *a.predicted_mean;
  if (a.predicted_variance) j["predicted_variance"] = *a.predicted_variance;
  if (a.variance_relative_error) j["variance_relative_error"] = *a.variance_relative_error;
  if (a.ks_predicted) j["ks_predicted"] = *a.ks_predicted;
  return j;
}

}  // namespace ddqos
