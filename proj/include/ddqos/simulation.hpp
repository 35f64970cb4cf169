#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ddqos/control.hpp"
#include "ddqos/errors.hpp"
#include "ddqos/load_model.hpp"
#include "ddqos/mean_field.hpp"
#include "ddqos/qos.hpp"
#include "ddqos/signals.hpp"
#include "ddqos/sim_config.hpp"
#include "ddqos/statistics.hpp"

namespace ddqos {

/// Per-epoch traces over the recorded horizon (burn-in excluded).
struct SimSeries {
  std::vector<double> reference;   // r_t = eps r1_t
  std::vector<double> shaped;      // rbar_t, equal to r_t unless reshaping acts
  std::vector<double> output;      // ytilde_t: mean utility minus ybar0
  std::vector<double> zeta;
  std::vector<double> error;       // rbar_t - ytilde_t
  std::vector<std::uint32_t> optouts;
  std::vector<double> qos_mean;    // population average of the cleaning QoS
  std::vector<double> soc;         // R_t
  std::vector<double> cycling_mean;
  std::vector<double> mean_field_gap;
};

struct SimResult {
  SimConfig config;
  SimSeries series;
  Histogram qos_hist{-1.0, 1.0, 1};
  RunningMoments qos_moments;
  std::uint64_t qos_out_of_bounds = 0;
  RunningMoments cycling_moments;
  std::uint64_t cycling_out_of_bounds = 0;
  long saturations = 0;
  std::uint64_t total_optouts = 0;
  double max_optout_fraction = 0.0;

  [[nodiscard]] std::size_t horizon() const { return series.reference.size(); }
};

/// RNG of load `index`: depends only on (master seed, index), so changing
/// the population size leaves existing loads' randomness unchanged.
inline std::mt19937_64 load_rng(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x10adu};
  return std::mt19937_64(seq);
}

inline std::mt19937_64 reference_rng(std::uint64_t master) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32), 0x5e1fu};
  return std::mt19937_64(seq);
}

/// Unit-scale base signal before low-pass filtering, `length` samples long.
inline std::vector<double> base_signal(const SimConfig& cfg, std::size_t length) {
  if (cfg.reference.source == ReferenceSource::Csv) {
    auto s = read_series_csv(cfg.reference.csv_path);
    if (s.size() < length)
      throw ConfigError("reference file has " + std::to_string(s.size()) + " samples, run needs " +
                        std::to_string(length));
    s.resize(length);
    return s;
  }
  auto rng = reference_rng(cfg.seed);
  return arma_generate(cfg.reference.arma, length, rng);
}

/// r1 = scale * G_BP(base), covering burn-in and horizon.
inline std::vector<double> unit_reference(const SimConfig& cfg) {
  auto r = filter_apply(cfg.lowpass(), base_signal(cfg, cfg.burn_in + cfg.horizon));
  for (double& v : r) v *= cfg.reference.scale;
  return r;
}

namespace detail {

/// Uniform on [0, 1) from the top 53 bits of one draw.
inline double draw_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Closed-loop population simulation with an explicit unit reference r1
/// (length >= burn_in + horizon). Epoch order: measure, control, actuate
/// (propose, guard, commit), update QoS, record.
inline SimResult run_closed_loop(const SimConfig& cfg, std::span<const double> r1) {
  cfg.validate();
  const std::size_t total = cfg.burn_in + cfg.horizon;
  if (r1.size() < total) throw DimensionMismatch("unit reference shorter than burn-in plus horizon");

  const TransitionModel model = cfg.model();
  const Pmf pi0 = stationary_pmf(model.nominal());
  const double ybar0 = aggregate_output(pi0, model.utility());
  const QosFilter filter = cfg.filter();
  const QosMetric cleaning = QosMetric::normalized_power(ybar0, cfg.cleaning.scale);
  const QosMetric cycling = QosMetric::cycling(cfg.cycling.scale);
  const bool guard_cleaning = cfg.cleaning.opt_out && cfg.cleaning.bounds.finite();
  const bool guard_cycling = cfg.cycling_enabled && cfg.cycling.opt_out && cfg.cycling.bounds.finite();

  const std::size_t N = cfg.population;
  const double invN = 1.0 / static_cast<double>(N);
  const Eigen::Index d = model.dimension();

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(N);
  std::vector<int> state(N);
  std::vector<QosTracker> clean_qos;
  std::vector<QosTracker> cyc_qos;
  clean_qos.reserve(N);
  if (cfg.cycling_enabled) cyc_qos.reserve(N);
  const double clean_prior = nominal_mean_increment(cleaning, model, pi0);
  const double cyc_prior = nominal_mean_increment(cycling, model, pi0);

  // Increment tables indexed by (from, to).
  std::vector<double> clean_inc(static_cast<std::size_t>(d * d)), cyc_inc(static_cast<std::size_t>(d * d));
  std::vector<double> utility(static_cast<std::size_t>(d));
  for (int x = 0; x < d; ++x) {
    utility[x] = model.utility()(x);
    for (int y = 0; y < d; ++y) {
      clean_inc[x * d + y] = qos_increment(cleaning, model, model.state(x), model.state(y));
      cyc_inc[x * d + y] = qos_increment(cycling, model, model.state(x), model.state(y));
    }
  }

  // Initial states drawn from pi0.
  std::vector<double> pi_cum(static_cast<std::size_t>(d));
  {
    double acc = 0.0;
    for (Eigen::Index x = 0; x < d; ++x) pi_cum[static_cast<std::size_t>(x)] = (acc += pi0(x));
  }
  double on_sum = 0.0;
  double clean_sum = 0.0, cyc_sum = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    rngs.push_back(load_rng(cfg.seed, i));
    const double u = detail::draw_uniform(rngs.back()) * pi_cum.back();
    int x = 0;
    while (x + 1 < d && u >= pi_cum[static_cast<std::size_t>(x)]) ++x;
    state[i] = x;
    on_sum += model.utility()(x);
    clean_qos.emplace_back(filter, cfg.cleaning.bounds, clean_prior);
    clean_sum += clean_qos.back().value();
    if (cfg.cycling_enabled) {
      cyc_qos.emplace_back(filter, cfg.cycling.bounds, cyc_prior);
      cyc_sum += cyc_qos.back().value();
    }
  }

  SimResult res;
  res.config = cfg;
  res.qos_hist = Histogram(cfg.record.hist_lo, cfg.record.hist_hi, cfg.record.hist_bins);
  auto& S = res.series;
  for (auto* v : {&S.reference, &S.shaped, &S.output, &S.zeta, &S.error, &S.qos_mean, &S.soc}) v->reserve(cfg.horizon);
  S.optouts.reserve(cfg.horizon);
  if (cfg.cycling_enabled) S.cycling_mean.reserve(cfg.horizon);

  PiController controller(cfg.gains);
  TiltedKernel kernel(model, 0.0);
  QosTracker soc(filter);
  const auto& rs = cfg.reference.reshape;
  Eigen::RowVectorXd mu = pi0.weights();
  std::vector<double> counts(static_cast<std::size_t>(d));
  long saturations_at_start = 0;

  for (std::size_t t = 0; t < total; ++t) {
    const bool recording = t >= cfg.burn_in;
    if (t == cfg.burn_in) saturations_at_start = controller.saturation_count();

    // Measure.
    const double y = on_sum * invN - ybar0;
    const double r = cfg.reference.epsilon * r1[t];
    double rbar = r;
    // The threshold test uses the SOC as it would be with the unshaped reference.
    if (rs.enabled)
      rbar = reshape_reference(r, soc.candidate(cfg.cleaning.scale * r), cfg.cleaning.bounds, rs.delta, rs.tau);
    const double R = soc.update(cfg.cleaning.scale * rbar);
    const double e = rbar - y;
    const double qos_mean_now = clean_sum * invN;
    const double cyc_mean_now = cyc_sum * invN;

    if (recording && cfg.record.mean_field) {
      std::fill(counts.begin(), counts.end(), 0.0);
      for (int x : state) counts[static_cast<std::size_t>(x)] += invN;
      double gap = 0.0;
      for (Eigen::Index x = 0; x < d; ++x) gap += std::abs(counts[static_cast<std::size_t>(x)] - mu(x));
      S.mean_field_gap.push_back(gap);
    }

    // Control.
    const double zeta = controller.step(e);
    kernel.reset(zeta);
    if (cfg.record.mean_field) mu = mu * transition_matrix(model, zeta);

    // Actuate and update QoS.
    const bool sample_qos = recording && ((t - cfg.burn_in) % cfg.record.qos_stride == 0);
    std::uint32_t optouts = 0;
    on_sum = 0.0;
    clean_sum = 0.0;
    cyc_sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const int x = state[i];
      int next = kernel.next(x, detail::draw_uniform(rngs[i]));
      // The guard is consulted only when the proposal would leave the bounds.
      const bool clean_ok = !guard_cleaning || cfg.cleaning.bounds.contains(clean_qos[i].candidate(clean_inc[x * d + next]));
      const bool cyc_ok = !guard_cycling || cfg.cycling.bounds.contains(cyc_qos[i].candidate(cyc_inc[x * d + next]));
      if (!clean_ok || !cyc_ok) {
        const LoadState cur = model.state(x);
        const LoadState prop = model.state(next);
        GuardDecision dec;
        if (guard_cleaning && guard_cycling)
          dec = opt_out_guard_prioritized(clean_qos[i], cleaning, cyc_qos[i], cycling, model, cur, prop);
        else if (guard_cleaning)
          dec = opt_out_guard(clean_qos[i], cleaning, model, cur, prop);
        else
          dec = opt_out_guard(cyc_qos[i], cycling, model, cur, prop);
        if (dec.overridden()) {
          ++optouts;
          next = model.index(dec.state);
        }
      }
      const double q = clean_qos[i].update(clean_inc[x * d + next]);
      clean_sum += q;
      if (cfg.cycling_enabled) {
        const double c = cyc_qos[i].update(cyc_inc[x * d + next]);
        cyc_sum += c;
        if (sample_qos) {
          res.cycling_moments.add(c);
          if (!cfg.cycling.bounds.contains(c)) ++res.cycling_out_of_bounds;
        }
      }
      if (sample_qos) {
        res.qos_hist.add(q);
        res.qos_moments.add(q);
        if (!cfg.cleaning.bounds.contains(q)) ++res.qos_out_of_bounds;
      }
      state[i] = next;
      on_sum += utility[next];
    }

    if (recording) {
      S.reference.push_back(r);
      S.shaped.push_back(rbar);
      S.output.push_back(y);
      S.zeta.push_back(zeta);
      S.error.push_back(e);
      S.optouts.push_back(optouts);
      S.qos_mean.push_back(qos_mean_now);
      S.soc.push_back(R);
      if (cfg.cycling_enabled) S.cycling_mean.push_back(cyc_mean_now);
      res.total_optouts += optouts;
      res.max_optout_fraction = std::max(res.max_optout_fraction, optouts * invN);
    }
  }
  res.saturations = controller.saturation_count() - (cfg.burn_in < total ? saturations_at_start : 0);
  return res;
}

inline SimResult run_closed_loop(const SimConfig& cfg) {
  cfg.validate();
  const auto r1 = unit_reference(cfg);
  return run_closed_loop(cfg, r1);
}

/// Nominal-noise run paired with `cfg`: same seed, eps = 0, no opt-out.
inline SimConfig baseline_config(SimConfig cfg) {
  cfg.reference.epsilon = 0.0;
  cfg.reference.reshape.enabled = false;
  cfg.cleaning.opt_out = false;
  cfg.cycling.opt_out = false;
  cfg.record.mean_field = false;
  return cfg;
}

}  // namespace ddqos
