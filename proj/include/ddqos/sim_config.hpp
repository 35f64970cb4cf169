#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include <toml.hpp>

#include "ddqos/control.hpp"
#include "ddqos/errors.hpp"
#include "ddqos/load_model.hpp"
#include "ddqos/qos.hpp"
#include "ddqos/signals.hpp"

namespace ddqos {

struct MetricConfig {
  double scale = 1.0;
  QosBounds bounds;
  bool opt_out = false;
};

struct ReshapeConfig {
  bool enabled = false;
  double delta = 0.006;
  double tau = 0.65;
};

enum class ReferenceSource { Arma, Csv };

struct ReferenceConfig {
  ReferenceSource source = ReferenceSource::Arma;
  std::string csv_path;
  ArmaModel arma = bpa_arma_model();
  double epsilon = 1.0;
  double scale = 1.0;             // r1 = scale * G_BP(base signal)
  double cutoff_per_min = 1e-3;   // Butterworth f_c
  ReshapeConfig reshape;
};

struct RecordConfig {
  double hist_lo = -150.0;
  double hist_hi = 150.0;
  std::size_t hist_bins = 1200;
  std::size_t qos_stride = 1;     // record per-load QoS every k-th epoch
  std::size_t psd_segment = 1024;
  bool baseline = true;           // also run eps = 0 without opt-out for NRMSE
  bool mean_field = false;        // track ||mu^N - mu||_1 against the mean-field recursion
};

/// Everything needed to reproduce one closed-loop experiment.
struct SimConfig {
  std::uint64_t seed = 1;

  std::size_t population = 10000;
  int sojourn_states = 12;
  double mean_cycle_hours = 12.0;
  double sampling_period_min = 5.0;

  std::size_t horizon = 8640;
  std::size_t burn_in = 28800;

  bool discounted = true;
  double beta = 1.0 - 1.0 / 2880.0;
  int window = 2880;

  // Cleaning QoS in hours of over/under-operation: 5 min = 1/12 h per epoch.
  MetricConfig cleaning{1.0 / 12.0, {}, false};
  bool cycling_enabled = false;
  MetricConfig cycling{1.0, {}, false};

  ReferenceConfig reference;
  PiGains gains;
  RecordConfig record;

  [[nodiscard]] QosFilter filter() const {
    return discounted ? QosFilter::discounted(beta) : QosFilter::moving_window(window);
  }

  [[nodiscard]] TransitionModel model() const {
    return build_pool_nominal(sojourn_states, sampling_period_min, mean_cycle_hours);
  }

  [[nodiscard]] LinearFilter lowpass() const {
    return butterworth_lowpass(reference.cutoff_per_min, sampling_period_min);
  }

  /// Throws ConfigError on the first inconsistency found.
  void validate() const;
};

namespace detail {

inline void config_check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline void check_keys(const toml::table& t, const std::string& where, std::initializer_list<std::string_view> allowed) {
  const std::set<std::string_view> ok(allowed);
  for (const auto& [k, v] : t) {
    if (!ok.count(k.str())) throw ConfigError("unknown key '" + std::string(k.str()) + "' in " + where);
  }
}

inline const toml::table* subtable(const toml::table& t, std::string_view key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  const toml::table* sub = n->as_table();
  if (!sub) throw ConfigError(where + "." + std::string(key) + " must be a table");
  return sub;
}

inline void read_double(const toml::table& t, std::string_view key, double& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return;
  auto v = n->value<double>();
  if (!v) throw ConfigError(where + "." + std::string(key) + " must be a number");
  out = *v;
}

inline void read_bool(const toml::table& t, std::string_view key, bool& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return;
  auto v = n->value<bool>();
  if (!v) throw ConfigError(where + "." + std::string(key) + " must be a boolean");
  out = *v;
}

inline void read_string(const toml::table& t, std::string_view key, std::string& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return;
  auto v = n->value<std::string>();
  if (!v) throw ConfigError(where + "." + std::string(key) + " must be a string");
  out = *v;
}

template <class Int>
void read_int(const toml::table& t, std::string_view key, Int& out, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return;
  const auto* v = n->as_integer();
  if (!v) throw ConfigError(where + "." + std::string(key) + " must be an integer");
  const std::int64_t x = v->get();
  if constexpr (std::is_unsigned_v<Int>) {
    if (x < 0) throw ConfigError(where + "." + std::string(key) + " must be non-negative");
  }
  out = static_cast<Int>(x);
}

inline void read_metric(const toml::table& t, MetricConfig& m, const std::string& where) {
  read_double(t, "scale", m.scale, where);
  read_double(t, "lower", m.bounds.lower, where);
  read_double(t, "upper", m.bounds.upper, where);
  read_bool(t, "opt_out", m.opt_out, where);
}

inline toml::table metric_table(const MetricConfig& m) {
  return toml::table{{"scale", m.scale}, {"lower", m.bounds.lower}, {"upper", m.bounds.upper}, {"opt_out", m.opt_out}};
}

}  // namespace detail

inline void SimConfig::validate() const {
  using detail::config_check;
  config_check(population >= 1, "population.size must be at least 1");
  config_check(sojourn_states >= 2, "population.sojourn_states must be at least 2");
  config_check(sampling_period_min > 0.0 && std::isfinite(sampling_period_min),
               "population.sampling_period_min must be positive");
  config_check(mean_cycle_hours > 0.0 && std::isfinite(mean_cycle_hours),
               "population.mean_cycle_hours must be positive");
  config_check(sampling_period_min < mean_cycle_hours * 60.0,
               "sampling period must be shorter than the mean cycle");
  config_check(horizon >= 1, "horizon.epochs must be at least 1");
  if (discounted) config_check(beta >= 0.0 && beta < 1.0, "qos.beta must lie in [0, 1)");
  else config_check(window >= 0, "qos.window must be non-negative");

  auto check_metric = [&](const MetricConfig& m, const std::string& name, double max_increment, double prior) {
    config_check(m.scale > 0.0 && std::isfinite(m.scale), name + ".scale must be positive");
    config_check(!std::isnan(m.bounds.lower) && !std::isnan(m.bounds.upper), name + " bounds must not be NaN");
    config_check(m.bounds.lower <= m.bounds.upper, name + ".lower exceeds " + name + ".upper");
    if (m.opt_out) {
      config_check(m.bounds.upper - m.bounds.lower >= 4.0 * max_increment * m.scale,
                   name + " interval narrower than four increments; the guard cannot be guaranteed");
      config_check(m.bounds.contains(prior * m.scale * filter().dc_gain()),
                   name + " bounds exclude the initial QoS value");
    }
  };
  check_metric(cleaning, "qos.cleaning", 1.0, 0.0);
  if (cycling_enabled) {
    const double p = sampling_period_min / (mean_cycle_hours * 60.0);
    check_metric(cycling, "qos.cycling", 2.0, 2.0 * p);
  }

  const auto& ref = reference;
  config_check(ref.epsilon >= 0.0 && ref.epsilon <= 1.0, "reference.epsilon must lie in [0, 1]");
  config_check(std::isfinite(ref.scale) && ref.scale >= 0.0, "reference.scale must be non-negative");
  config_check(ref.cutoff_per_min > 0.0 && ref.cutoff_per_min < 0.5 / sampling_period_min,
               "reference.cutoff_per_min must lie in (0, Nyquist)");
  if (ref.source == ReferenceSource::Csv) {
    config_check(!ref.csv_path.empty(), "reference.csv is required when reference.source = \"csv\"");
    config_check(std::filesystem::exists(ref.csv_path), "reference file not found: " + ref.csv_path);
  } else {
    config_check(ref.arma.sigma_w2 > 0.0 && std::isfinite(ref.arma.sigma_w2), "reference.arma.sigma_w2 must be positive");
    config_check(ref.arma.stationary(), "reference.arma is not stationary");
  }
  config_check(ref.reshape.tau >= 0.0 && ref.reshape.tau < 1.0, "reference.reshape.tau must lie in [0, 1)");
  config_check(ref.reshape.delta >= 0.0, "reference.reshape.delta must be non-negative");
  if (ref.reshape.enabled)
    config_check(std::isfinite(cleaning.bounds.lower) && std::isfinite(cleaning.bounds.upper),
                 "reshaping needs finite qos.cleaning bounds");

  config_check(std::isfinite(gains.kp) && std::isfinite(gains.ki), "control gains must be finite");
  config_check(gains.zeta_max > 0.0, "control.zeta_max must be positive");

  config_check(record.hist_lo < record.hist_hi, "record.hist_lo must be below record.hist_hi");
  config_check(record.hist_bins >= 1, "record.hist_bins must be at least 1");
  config_check(record.qos_stride >= 1, "record.qos_stride must be at least 1");
  config_check(record.psd_segment >= 4 && record.psd_segment % 2 == 0, "record.psd_segment must be even and >= 4");
}

/// Parses a TOML document. Missing keys keep their defaults.
inline SimConfig parse_config(std::string_view text, const std::string& source_name = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source_name << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }
  using namespace detail;
  SimConfig c;
  check_keys(root, "config", {"seed", "population", "horizon", "qos", "reference", "control", "record"});
  read_int(root, "seed", c.seed, "config");

  if (const auto* t = subtable(root, "population", "config")) {
    check_keys(*t, "population", {"size", "sojourn_states", "mean_cycle_hours", "sampling_period_min"});
    read_int(*t, "size", c.population, "population");
    read_int(*t, "sojourn_states", c.sojourn_states, "population");
    read_double(*t, "mean_cycle_hours", c.mean_cycle_hours, "population");
    read_double(*t, "sampling_period_min", c.sampling_period_min, "population");
  }
  if (const auto* t = subtable(root, "horizon", "config")) {
    check_keys(*t, "horizon", {"epochs", "burn_in"});
    read_int(*t, "epochs", c.horizon, "horizon");
    read_int(*t, "burn_in", c.burn_in, "horizon");
  }
  if (const auto* t = subtable(root, "qos", "config")) {
    check_keys(*t, "qos", {"filter", "beta", "window", "cleaning", "cycling"});
    std::string kind = "discounted";
    read_string(*t, "filter", kind, "qos");
    if (kind == "discounted") c.discounted = true;
    else if (kind == "window") c.discounted = false;
    else throw ConfigError("qos.filter must be \"discounted\" or \"window\"");
    read_double(*t, "beta", c.beta, "qos");
    read_int(*t, "window", c.window, "qos");
    if (const auto* m = subtable(*t, "cleaning", "qos")) {
      check_keys(*m, "qos.cleaning", {"scale", "lower", "upper", "opt_out"});
      read_metric(*m, c.cleaning, "qos.cleaning");
    }
    if (const auto* m = subtable(*t, "cycling", "qos")) {
      check_keys(*m, "qos.cycling", {"enabled", "scale", "lower", "upper", "opt_out"});
      read_bool(*m, "enabled", c.cycling_enabled, "qos.cycling");
      read_metric(*m, c.cycling, "qos.cycling");
    }
  }
  if (const auto* t = subtable(root, "reference", "config")) {
    check_keys(*t, "reference", {"source", "csv", "epsilon", "scale", "cutoff_per_min", "arma", "reshape"});
    std::string source = "arma";
    read_string(*t, "source", source, "reference");
    if (source == "arma") c.reference.source = ReferenceSource::Arma;
    else if (source == "csv") c.reference.source = ReferenceSource::Csv;
    else throw ConfigError("reference.source must be \"arma\" or \"csv\"");
    read_string(*t, "csv", c.reference.csv_path, "reference");
    read_double(*t, "epsilon", c.reference.epsilon, "reference");
    read_double(*t, "scale", c.reference.scale, "reference");
    read_double(*t, "cutoff_per_min", c.reference.cutoff_per_min, "reference");
    if (const auto* a = subtable(*t, "arma", "reference")) {
      check_keys(*a, "reference.arma", {"a1", "a2", "b1", "sigma_w2"});
      read_double(*a, "a1", c.reference.arma.a1, "reference.arma");
      read_double(*a, "a2", c.reference.arma.a2, "reference.arma");
      read_double(*a, "b1", c.reference.arma.b1, "reference.arma");
      read_double(*a, "sigma_w2", c.reference.arma.sigma_w2, "reference.arma");
    }
    if (const auto* r = subtable(*t, "reshape", "reference")) {
      check_keys(*r, "reference.reshape", {"enabled", "delta", "tau"});
      read_bool(*r, "enabled", c.reference.reshape.enabled, "reference.reshape");
      read_double(*r, "delta", c.reference.reshape.delta, "reference.reshape");
      read_double(*r, "tau", c.reference.reshape.tau, "reference.reshape");
    }
  }
  if (const auto* t = subtable(root, "control", "config")) {
    check_keys(*t, "control", {"kp", "ki", "zeta_max"});
    read_double(*t, "kp", c.gains.kp, "control");
    read_double(*t, "ki", c.gains.ki, "control");
    read_double(*t, "zeta_max", c.gains.zeta_max, "control");
  }
  if (const auto* t = subtable(root, "record", "config")) {
    check_keys(*t, "record", {"hist_lo", "hist_hi", "hist_bins", "qos_stride", "psd_segment", "baseline", "mean_field"});
    read_double(*t, "hist_lo", c.record.hist_lo, "record");
    read_double(*t, "hist_hi", c.record.hist_hi, "record");
    read_int(*t, "hist_bins", c.record.hist_bins, "record");
    read_int(*t, "qos_stride", c.record.qos_stride, "record");
    read_int(*t, "psd_segment", c.record.psd_segment, "record");
    read_bool(*t, "baseline", c.record.baseline, "record");
    read_bool(*t, "mean_field", c.record.mean_field, "record");
  }
  c.validate();
  return c;
}

inline SimConfig load_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

inline toml::table config_table(const SimConfig& c) {
  toml::table root;
  root.insert("seed", static_cast<std::int64_t>(c.seed));
  root.insert("population", toml::table{{"size", static_cast<std::int64_t>(c.population)},
                                        {"sojourn_states", c.sojourn_states},
                                        {"mean_cycle_hours", c.mean_cycle_hours},
                                        {"sampling_period_min", c.sampling_period_min}});
  root.insert("horizon", toml::table{{"epochs", static_cast<std::int64_t>(c.horizon)},
                                     {"burn_in", static_cast<std::int64_t>(c.burn_in)}});
  toml::table cyc = detail::metric_table(c.cycling);
  cyc.insert("enabled", c.cycling_enabled);
  root.insert("qos", toml::table{{"filter", c.discounted ? "discounted" : "window"},
                                 {"beta", c.beta},
                                 {"window", c.window},
                                 {"cleaning", detail::metric_table(c.cleaning)},
                                 {"cycling", std::move(cyc)}});
  const auto& r = c.reference;
  root.insert("reference",
              toml::table{{"source", r.source == ReferenceSource::Csv ? "csv" : "arma"},
                          {"csv", r.csv_path},
                          {"epsilon", r.epsilon},
                          {"scale", r.scale},
                          {"cutoff_per_min", r.cutoff_per_min},
                          {"arma", toml::table{{"a1", r.arma.a1}, {"a2", r.arma.a2}, {"b1", r.arma.b1},
                                               {"sigma_w2", r.arma.sigma_w2}}},
                          {"reshape", toml::table{{"enabled", r.reshape.enabled},
                                                  {"delta", r.reshape.delta},
                                                  {"tau", r.reshape.tau}}}});
  root.insert("control", toml::table{{"kp", c.gains.kp}, {"ki", c.gains.ki}, {"zeta_max", c.gains.zeta_max}});
  root.insert("record", toml::table{{"hist_lo", c.record.hist_lo},
                                    {"hist_hi", c.record.hist_hi},
                                    {"hist_bins", static_cast<std::int64_t>(c.record.hist_bins)},
                                    {"qos_stride", static_cast<std::int64_t>(c.record.qos_stride)},
                                    {"psd_segment", static_cast<std::int64_t>(c.record.psd_segment)},
                                    {"baseline", c.record.baseline},
                                    {"mean_field", c.record.mean_field}});
  return root;
}

inline std::string write_config(const SimConfig& c) {
  std::ostringstream os;
  os << config_table(c) << "\n";
  return os.str();
}

inline bool operator==(const MetricConfig& a, const MetricConfig& b) {
  return a.scale == b.scale && a.bounds.lower == b.bounds.lower && a.bounds.upper == b.bounds.upper &&
         a.opt_out == b.opt_out;
}

inline bool operator==(const SimConfig& a, const SimConfig& b) {
  const auto& ra = a.reference;
  const auto& rb = b.reference;
  const bool ref_eq = ra.source == rb.source && ra.csv_path == rb.csv_path && ra.arma.a1 == rb.arma.a1 &&
                      ra.arma.a2 == rb.arma.a2 && ra.arma.b1 == rb.arma.b1 && ra.arma.sigma_w2 == rb.arma.sigma_w2 &&
                      ra.epsilon == rb.epsilon && ra.scale == rb.scale && ra.cutoff_per_min == rb.cutoff_per_min &&
                      ra.reshape.enabled == rb.reshape.enabled && ra.reshape.delta == rb.reshape.delta &&
                      ra.reshape.tau == rb.reshape.tau;
  const auto& ka = a.record;
  const auto& kb = b.record;
  const bool rec_eq = ka.hist_lo == kb.hist_lo && ka.hist_hi == kb.hist_hi && ka.hist_bins == kb.hist_bins &&
                      ka.qos_stride == kb.qos_stride && ka.psd_segment == kb.psd_segment &&
                      ka.baseline == kb.baseline && ka.mean_field == kb.mean_field;
  return a.seed == b.seed && a.population == b.population && a.sojourn_states == b.sojourn_states &&
         a.mean_cycle_hours == b.mean_cycle_hours && a.sampling_period_min == b.sampling_period_min &&
         a.horizon == b.horizon && a.burn_in == b.burn_in && a.discounted == b.discounted && a.beta == b.beta &&
         a.window == b.window && a.cleaning == b.cleaning && a.cycling_enabled == b.cycling_enabled &&
         a.cycling == b.cycling && ref_eq && a.gains.kp == b.gains.kp && a.gains.ki == b.gains.ki &&
         a.gains.zeta_max == b.gains.zeta_max && rec_eq;
}

}  // namespace ddqos
