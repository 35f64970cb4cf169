#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "ddqos/errors.hpp"
#include "ddqos/load_model.hpp"
#include "ddqos/mean_field.hpp"

namespace ddqos {

struct Discounted {
  double beta;
};

struct MovingWindow {
  int window;  // T_f; the sum covers T_f + 1 epochs
};

/// Stable filter H applied to a per-epoch increment sequence.
class QosFilter {
 public:
  using Kind = std::variant<Discounted, MovingWindow>;

  static QosFilter discounted(double beta) { return QosFilter(Discounted{beta}); }
  static QosFilter moving_window(int window) { return QosFilter(MovingWindow{window}); }

  explicit QosFilter(Kind kind) : kind_(kind) {
    if (const auto* d = std::get_if<Discounted>(&kind_))
      detail::require(d->beta >= 0.0 && d->beta < 1.0, "discount factor must lie in [0, 1)");
    else
      detail::require(std::get<MovingWindow>(kind_).window >= 0, "window length must be non-negative");
  }

  [[nodiscard]] const Kind& kind() const { return kind_; }
  [[nodiscard]] bool is_discounted() const { return std::holds_alternative<Discounted>(kind_); }
  [[nodiscard]] double beta() const { return std::get<Discounted>(kind_).beta; }
  [[nodiscard]] int window() const { return std::get<MovingWindow>(kind_).window; }

  /// H(1).
  [[nodiscard]] double dc_gain() const {
    if (is_discounted()) return 1.0 / (1.0 - beta());
    return static_cast<double>(window() + 1);
  }

  /// H(exp(j theta)).
  [[nodiscard]] std::complex<double> frequency_response(double theta) const {
    const std::complex<double> zinv = std::polar(1.0, -theta);
    if (is_discounted()) return 1.0 / (1.0 - beta() * zinv);
    const int T = window();
    // Geometric sum; fall back to the count at the removable singularity.
    if (std::abs(1.0 - zinv) < 1e-12) return static_cast<double>(T + 1);
    return (1.0 - std::pow(zinv, T + 1)) / (1.0 - zinv);
  }

 private:
  Kind kind_;
};

/// Mean of the geometric horizon: 1 / (1 - beta).
inline double expected_window(double beta) {
  detail::require(beta >= 0.0 && beta < 1.0, "discount factor must lie in [0, 1)");
  return 1.0 / (1.0 - beta);
}

enum class MetricKind { Power, NormalizedPower, Cycling };

/// Per-epoch QoS increment. `scale` converts the raw increment into the
/// units the bounds are expressed in (e.g. hours of operation per epoch).
struct QosMetric {
  MetricKind kind = MetricKind::NormalizedPower;
  double nominal_output = 0.0;  // ybar0, used by NormalizedPower
  double scale = 1.0;

  static QosMetric power(double scale = 1.0) { return {MetricKind::Power, 0.0, scale}; }
  static QosMetric normalized_power(double ybar0, double scale = 1.0) {
    return {MetricKind::NormalizedPower, ybar0, scale};
  }
  static QosMetric cycling(double scale = 1.0) { return {MetricKind::Cycling, 0.0, scale}; }
};

inline double qos_increment(const QosMetric& metric, const TransitionModel& model,
                            const LoadState& prev, const LoadState& next) {
  switch (metric.kind) {
    case MetricKind::Power:
      return metric.scale * model.utility(next);
    case MetricKind::NormalizedPower:
      return metric.scale * (model.utility(next) - metric.nominal_output);
    case MetricKind::Cycling:
      // Both indicator differences of the cycling count fire on a switch.
      return next.mode != prev.mode ? 2.0 * metric.scale : 0.0;
  }
  return 0.0;
}

/// Stationary mean of the increment under the nominal chain.
inline double nominal_mean_increment(const QosMetric& metric, const TransitionModel& model,
                                     const Pmf& pi0) {
  double mean = 0.0;
  const auto& P = model.nominal();
  for (int x = 0; x < model.dimension(); ++x)
    for (int y : model.successors(x))
      mean += pi0(x) * P(x, y) * qos_increment(metric, model, model.state(x), model.state(y));
  return mean;
}

struct QosBounds {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  [[nodiscard]] bool contains(double v) const { return v >= lower && v <= upper; }
  [[nodiscard]] bool finite() const { return std::isfinite(lower) || std::isfinite(upper); }
};

/// Filtered QoS value of one load.
class QosTracker {
 public:
  /// `prior` is the assumed past per-epoch increment: the tracker starts at
  /// H(1) * prior, and a moving window is primed with T_f + 1 copies.
  QosTracker(QosFilter filter, QosBounds bounds = {}, double prior = 0.0)
      : filter_(filter), bounds_(bounds) {
    detail::require(bounds.lower <= bounds.upper, "lower bound exceeds upper bound");
    value_ = filter_.dc_gain() * prior;
    if (!filter_.is_discounted())
      window_.assign(static_cast<std::size_t>(filter_.window()) + 1, prior);
  }

  [[nodiscard]] double value() const { return value_; }
  [[nodiscard]] const QosBounds& bounds() const { return bounds_; }
  [[nodiscard]] const QosFilter& filter() const { return filter_; }

  /// Value that update(increment) would produce, without committing it.
  [[nodiscard]] double candidate(double increment) const {
    if (filter_.is_discounted()) return filter_.beta() * value_ + increment;
    return value_ + increment - window_[head_];
  }

  double update(double increment) {
    if (filter_.is_discounted()) {
      value_ = filter_.beta() * value_ + increment;
    } else {
      value_ += increment - window_[head_];
      window_[head_] = increment;
      head_ = (head_ + 1) % window_.size();
    }
    return value_;
  }

 private:
  QosFilter filter_;
  QosBounds bounds_;
  double value_ = 0.0;
  std::vector<double> window_;  // oldest entry at head_
  std::size_t head_ = 0;
};

/// Returns the new value after one update.
inline double qos_update(QosTracker& tracker, double increment) { return tracker.update(increment); }

struct GuardDecision {
  enum class Action { Accept, Override };
  Action action = Action::Accept;
  LoadState state;  // state to commit

  [[nodiscard]] bool overridden() const { return action == Action::Override; }
};

/// Opt-out rule: keep the proposed state if the next QoS value stays in
/// bounds, otherwise take whichever mode continuation moves the value back
/// toward the violated bound.
inline GuardDecision opt_out_guard(const QosTracker& tracker, const QosMetric& metric,
                                   const TransitionModel& model, const LoadState& current,
                                   const LoadState& proposed) {
  const auto& b = tracker.bounds();
  const double next_value = tracker.candidate(qos_increment(metric, model, current, proposed));
  if (b.contains(next_value)) return {GuardDecision::Action::Accept, proposed};

  const LoadState on = model.continuation(current, Mode::On);
  const LoadState off = model.continuation(current, Mode::Off);
  const double inc_on = qos_increment(metric, model, current, on);
  const double inc_off = qos_increment(metric, model, current, off);
  const bool below = next_value < b.lower;
  // Below the lower bound take the larger increment, above the upper the smaller.
  const LoadState alternative = (below == (inc_on >= inc_off)) ? on : off;
  const double alt_value = tracker.candidate(below ? std::max(inc_on, inc_off) : std::min(inc_on, inc_off));
  if (!b.contains(alt_value))
    throw InfeasibleBounds("no admissible action keeps the QoS value within bounds");
  return {GuardDecision::Action::Override, alternative};
}

/// Two-metric opt-out: the primary metric has priority, so the secondary
/// guard may only override when its alternative also satisfies the primary.
inline GuardDecision opt_out_guard_prioritized(const QosTracker& primary, const QosMetric& primary_metric,
                                               const QosTracker& secondary,
                                               const QosMetric& secondary_metric,
                                               const TransitionModel& model, const LoadState& current,
                                               const LoadState& proposed) {
  const auto first = opt_out_guard(primary, primary_metric, model, current, proposed);
  if (first.overridden()) return first;
  GuardDecision second;
  try {
    second = opt_out_guard(secondary, secondary_metric, model, current, proposed);
  } catch (const InfeasibleBounds&) {
    return first;
  }
  if (!second.overridden()) return first;
  const double primary_next =
      primary.candidate(qos_increment(primary_metric, model, current, second.state));
  if (!primary.bounds().contains(primary_next)) return first;
  return second;
}

inline double population_average(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("population average of an empty set");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

/// R = H(scale * r) with zero initial state.
inline std::vector<double> filtered_reference(const QosFilter& filter, std::span<const double> r,
                                              double scale = 1.0) {
  QosTracker tracker(filter);
  std::vector<double> out;
  out.reserve(r.size());
  for (double v : r) {
    if (!std::isfinite(v)) throw InvalidArgument("reference contains a non-finite sample");
    out.push_back(tracker.update(scale * v));
  }
  return out;
}

}  // namespace ddqos
