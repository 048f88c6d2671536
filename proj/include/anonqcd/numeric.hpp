#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace anonqcd {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(e^a + e^b) with -inf as the additive identity.
inline double log_add(double a, double b) noexcept {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  if (a == kInf) return kInf;
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> xs) noexcept {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf || hi == kInf) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// Streaming log-sum-exp accumulator; rescales when a larger term arrives.
class LogSumAccumulator {
 public:
  void add(double x) noexcept {
    if (x == kNegInf) return;
    if (x == kInf) {
      max_ = kInf;
      return;
    }
    if (max_ == kInf) return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  double value() const noexcept {
    if (max_ == kNegInf || max_ == kInf) return max_;
    return max_ + std::log(sum_);
  }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

// q * log(q / p) with 0 log 0 = 0 and q log(q/0) = +inf.
inline double kl_term(double q, double p) noexcept {
  if (q <= 0.0) return 0.0;
  if (p <= 0.0) return kInf;
  return q * std::log(q / p);
}

inline double kl_divergence(std::span<const double> q, std::span<const double> p) noexcept {
  double acc = 0.0;
  for (std::size_t x = 0; x < q.size(); ++x) acc += kl_term(q[x], p[x]);
  return acc;
}

inline double log_factorial(std::int64_t m) noexcept {
  return std::lgamma(static_cast<double>(m) + 1.0);
}

inline double log_binomial(std::int64_t top, std::int64_t bottom) noexcept {
  return log_factorial(top) - log_factorial(bottom) - log_factorial(top - bottom);
}

// Table of log(m!) for m = 0..max, summed exactly term by term.
inline std::vector<double> log_factorial_table(std::size_t max) {
  std::vector<double> t(max + 1, 0.0);
  for (std::size_t m = 2; m <= max; ++m) t[m] = t[m - 1] + std::log(static_cast<double>(m));
  return t;
}

// Neumaier-compensated sum; order-robust to ~1 ulp of the total.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) noexcept {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace anonqcd
