#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddqos/control.hpp"
#include "ddqos/errors.hpp"
#include "ddqos/mean_field.hpp"
#include "ddqos/qos.hpp"
#include "ddqos/sim_config.hpp"
#include "ddqos/simulation.hpp"
#include "ddqos/spectral.hpp"
#include "ddqos/statistics.hpp"

namespace ddqos {

/// (RMS(e) - RMS(e_nominal)) / RMS(r). Negative values are reported as-is.
inline double nrmse(std::span<const double> e, std::span<const double> e_nominal, std::span<const double> r) {
  if (e.size() != e_nominal.size() || e.size() != r.size())
    throw DimensionMismatch("NRMSE series must have equal lengths");
  const double rr = rms(r);
  if (!(rr > 0.0)) throw InvalidArgument("zero reference: NRMSE undefined");
  return (rms(e) - rms(e_nominal)) / rr;
}

/// Closed-loop run together with its nominal-noise baseline.
struct RunOutcome {
  SimResult result;
  std::optional<SimResult> baseline;
  double nrmse = std::numeric_limits<double>::quiet_NaN();
};

inline RunOutcome run_with_baseline(const SimConfig& cfg, std::span<const double> r1) {
  RunOutcome out{run_closed_loop(cfg, r1), std::nullopt};
  if (cfg.record.baseline) {
    out.baseline = run_closed_loop(baseline_config(cfg), r1);
    if (rms(out.result.series.reference) > 0.0)
      out.nrmse = nrmse(out.result.series.error, out.baseline->series.error, out.result.series.reference);
  }
  return out;
}

inline RunOutcome run_with_baseline(const SimConfig& cfg) {
  cfg.validate();
  const auto r1 = unit_reference(cfg);
  return run_with_baseline(cfg, r1);
}

/// Linear-model predictions for the cleaning QoS of one load.
struct QosPrediction {
  double mean = 0.0;
  double variance = 0.0;          // at the configured eps
  double nominal_variance = 0.0;  // eps = 0
  double second_order = 0.0;      // coefficient of eps^2
  double moving_window_ratio = std::numeric_limits<double>::quiet_NaN();  // V / T_f, window filters only
  double psd_at_zero = 0.0;       // S_L(0) at eps = 0
  std::size_t grid_points = 0;
};

/// ARMA model behind the configured base signal: the configured one, or an
/// ELS fit when the signal comes from a file.
inline ArmaModel reference_arma(const SimConfig& cfg) {
  if (cfg.reference.source == ReferenceSource::Csv) return els_fit(read_series_csv(cfg.reference.csv_path));
  return cfg.reference.arma;
}

/// Unit-eps density of the command zeta implied by the closed loop.
inline SpectralDensity command_psd(const SimConfig& cfg, const std::vector<double>& grid) {
  const auto model = cfg.model();
  const auto loop = closed_loop_map(linearize(model), cfg.gains);
  return input_psd(loop, reference_psd(reference_arma(cfg), cfg.lowpass(), cfg.reference.scale, grid));
}

inline QosSpectralModel cleaning_spectral_model(const SimConfig& cfg, std::vector<double> grid) {
  const auto model = cfg.model();
  const Pmf pi0 = stationary_pmf(model.nominal());
  const double ybar0 = aggregate_output(pi0, model.utility());
  const Eigen::VectorXd ell = cfg.cleaning.scale * (model.utility().array() - ybar0).matrix();
  return QosSpectralModel(model.nominal(), pi0, ell, nominal_noise_model(model), std::move(grid));
}

inline QosPrediction predict_cleaning_qos(const SimConfig& cfg) {
  const QosFilter filter = cfg.filter();
  const std::size_t m = recommended_grid_points(filter);
  const auto grid = SpectralDensity::uniform_grid(m);
  const auto sm = cleaning_spectral_model(cfg, grid);
  const auto unit = command_psd(cfg, grid);
  const double eps = cfg.reference.epsilon;
  QosPrediction p;
  p.grid_points = m;
  p.mean = qos_mean(sm, filter);
  p.nominal_variance = qos_variance(sm.nominal_psd(), filter);
  SpectralDensity slope = sm.input_gain();
  for (std::size_t k = 0; k < slope.size(); ++k) slope.values[k] *= unit.values[k];
  p.second_order = qos_variance(slope, filter);
  p.variance = qos_variance(sm.psd(unit, eps), filter);
  p.psd_at_zero = sm.nominal_psd().values[m / 2];
  if (!filter.is_discounted() && filter.window() > 0)
    p.moving_window_ratio = p.nominal_variance / static_cast<double>(filter.window());
  return p;
}

struct CalibrationOptions {
  double lower = 0.0;
  double upper = 20.0;
  double target_nrmse = 0.01;
  double tolerance = 1e-3;  // relative width of the final bracket
  int max_iterations = 40;
};

struct CalibrationResult {
  double scale = 0.0;
  double nrmse = 0.0;
  int iterations = 0;
};

/// Largest reference scale (within the bracket) whose eps = 1 run without
/// opt-out tracks with NRMSE below the target. Bisection assumes NRMSE grows
/// with the scale.
inline CalibrationResult calibrate_reference(SimConfig cfg, const CalibrationOptions& opt = {}) {
  detail::require(opt.lower >= 0.0 && opt.lower < opt.upper, "calibration bracket must satisfy 0 <= lower < upper");
  cfg.reference.epsilon = 1.0;
  cfg.reference.reshape.enabled = false;
  cfg.cleaning.opt_out = false;
  cfg.cycling.opt_out = false;
  cfg.record.mean_field = false;
  cfg.reference.scale = 1.0;
  cfg.validate();
  const auto unit = unit_reference(cfg);
  const auto base = run_closed_loop(baseline_config(cfg), unit);

  auto evaluate = [&](double scale) {
    std::vector<double> r1(unit);
    for (double& v : r1) v *= scale;
    SimConfig c = cfg;
    c.reference.scale = scale;
    const auto res = run_closed_loop(c, r1);
    if (!(rms(res.series.reference) > 0.0)) return 0.0;  // zero signal: trivially feasible
    return nrmse(res.series.error, base.series.error, res.series.reference);
  };

  CalibrationResult out;
  const double at_upper = evaluate(opt.upper);
  out.iterations = 1;
  if (at_upper < opt.target_nrmse) return {opt.upper, at_upper, 1};
  double lo = opt.lower, hi = opt.upper;
  double lo_nrmse = 0.0;
  if (lo > 0.0) {
    lo_nrmse = evaluate(lo);
    ++out.iterations;
    if (!(lo_nrmse < opt.target_nrmse)) throw CalibrationFailure("no reference scale in the bracket meets the NRMSE target");
  }
  while (out.iterations < opt.max_iterations && (hi - lo) > opt.tolerance * hi) {
    const double mid = 0.5 * (lo + hi);
    const double v = evaluate(mid);
    ++out.iterations;
    if (v < opt.target_nrmse) {
      lo = mid;
      lo_nrmse = v;
    } else {
      hi = mid;
    }
  }
  if (!(lo > 0.0)) throw CalibrationFailure("no positive reference scale meets the NRMSE target");
  out.scale = lo;
  out.nrmse = lo_nrmse;
  return out;
}

struct SweepCell {
  double epsilon = 0.0;
  QosBounds cleaning;
  std::optional<QosBounds> cycling;
};

struct SweepRow {
  SweepCell cell;
  bool ok = false;
  std::string error;
  double nrmse = std::numeric_limits<double>::quiet_NaN();
  double rms_error = 0.0;
  double rms_reference = 0.0;
  std::uint64_t total_optouts = 0;
  double max_optout_fraction = 0.0;
  std::uint64_t out_of_bounds = 0;
  double qos_variance = 0.0;
  long saturations = 0;
};

/// One run per cell, all with the template's seed (common random numbers).
/// Failures are recorded per cell and the sweep continues.
inline std::vector<SweepRow> sweep(SimConfig base, std::span<const SweepCell> cells) {
  base.record.mean_field = false;
  base.validate();
  const auto unit = unit_reference(base);
  const auto nominal = run_closed_loop(baseline_config(base), unit);
  std::vector<SweepRow> rows;
  for (const auto& cell : cells) {
    SweepRow row;
    row.cell = cell;
    try {
      SimConfig c = base;
      c.reference.epsilon = cell.epsilon;
      c.cleaning.bounds = cell.cleaning;
      c.cleaning.opt_out = cell.cleaning.finite();
      if (cell.cycling) {
        c.cycling_enabled = true;
        c.cycling.bounds = *cell.cycling;
        c.cycling.opt_out = cell.cycling->finite();
      }
      const auto res = run_closed_loop(c, unit);
      row.rms_error = rms(res.series.error);
      row.rms_reference = rms(res.series.reference);
      if (row.rms_reference > 0.0) row.nrmse = nrmse(res.series.error, nominal.series.error, res.series.reference);
      row.total_optouts = res.total_optouts;
      row.max_optout_fraction = res.max_optout_fraction;
      row.out_of_bounds = res.qos_out_of_bounds;
      row.qos_variance = res.qos_moments.variance();
      row.saturations = res.saturations;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Time average of ||mu^N_t - mu_t||_1 for a population of size N.
inline double mean_field_gap(SimConfig cfg, std::size_t population) {
  cfg.population = population;
  cfg.record.mean_field = true;
  cfg.record.baseline = false;
  const auto res = run_closed_loop(cfg);
  return mean_of(res.series.mean_field_gap);
}

}  // namespace ddqos
