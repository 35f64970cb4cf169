#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ddqos/errors.hpp"

namespace ddqos {

/// Streaming first and second moments plus extrema (Welford).
class RunningMoments {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
  }

  [[nodiscard]] std::uint64_t count() const { return n_; }
  [[nodiscard]] double mean() const { return mean_; }
  /// Population variance (divides by n).
  [[nodiscard]] double variance() const { return n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0; }
  [[nodiscard]] double min() const { return min_; }
  [[nodiscard]] double max() const { return max_; }

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double min_ = std::numeric_limits<double>::infinity();
  double max_ = -std::numeric_limits<double>::infinity();
};

/// Fixed-edge histogram with explicit underflow and overflow counts.
class Histogram {
 public:
  Histogram(double lo, double hi, std::size_t bins) : lo_(lo), hi_(hi), counts_(bins, 0) {
    detail::require(bins > 0, "histogram needs at least one bin");
    detail::require(lo < hi, "histogram range must be increasing");
    width_ = (hi - lo) / static_cast<double>(bins);
  }

  void add(double x) {
    if (x < lo_) {
      ++underflow_;
    } else if (x >= hi_) {
      ++overflow_;
    } else {
      auto k = static_cast<std::size_t>((x - lo_) / width_);
      counts_[std::min(k, counts_.size() - 1)] += 1;
    }
  }

  /// Restores counts from a stored histogram.
  void assign(std::vector<std::uint64_t> counts, std::uint64_t underflow, std::uint64_t overflow) {
    if (counts.size() != counts_.size()) throw DimensionMismatch("histogram bin count differs");
    counts_ = std::move(counts);
    underflow_ = underflow;
    overflow_ = overflow;
  }

  [[nodiscard]] double lo() const { return lo_; }
  [[nodiscard]] double hi() const { return hi_; }
  [[nodiscard]] double width() const { return width_; }
  [[nodiscard]] std::size_t bins() const { return counts_.size(); }
  [[nodiscard]] double edge(std::size_t k) const { return lo_ + width_ * static_cast<double>(k); }
  [[nodiscard]] const std::vector<std::uint64_t>& counts() const { return counts_; }
  [[nodiscard]] std::uint64_t underflow() const { return underflow_; }
  [[nodiscard]] std::uint64_t overflow() const { return overflow_; }

  [[nodiscard]] std::uint64_t total() const {
    std::uint64_t n = underflow_ + overflow_;
    for (auto c : counts_) n += c;
    return n;
  }

 private:
  double lo_;
  double hi_;
  double width_ = 1.0;
  std::vector<std::uint64_t> counts_;
  std::uint64_t underflow_ = 0;
  std::uint64_t overflow_ = 0;
};

inline double normal_cdf(double x, double mean, double variance) {
  if (variance <= 0.0) return x < mean ? 0.0 : 1.0;
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

inline double normal_pdf(double x, double mean, double variance) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  const double z = (x - mean) / std::sqrt(variance);
  return inv_sqrt_2pi / std::sqrt(variance) * std::exp(-0.5 * z * z);
}

inline double mean_of(std::span<const double> x) {
  detail::require(!x.empty(), "mean of an empty series");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double rms(std::span<const double> x) {
  detail::require(!x.empty(), "rms of an empty series");
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

/// Population variance of a series.
inline double variance_of(std::span<const double> x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

inline double correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("correlation of series with different lengths");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct LinearFit {
  double intercept;
  double slope;
  double r_squared;
};

/// Ordinary least squares y = intercept + slope * x.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("line fit needs two or more paired points");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {my - slope * mx, slope, r2};
}

}  // namespace ddqos
