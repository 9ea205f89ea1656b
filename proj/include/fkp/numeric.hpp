#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

namespace fkp {

inline constexpr double pi = std::numbers::pi;

/// Raised when a computation produces a non-finite value (coefficient
/// blow-up, overflowing weights, divergent quadrature).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Neumaier's variant of Kahan summation. Deterministic for a fixed order
/// of `add` calls.
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

inline double compensated_sum(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * pi));
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

/// Trapezoid weights on a uniform grid of `points` nodes with spacing `h`.
inline double trapezoid_weight(std::size_t j, std::size_t points, double h) {
  return (j == 0 || j + 1 == points) ? 0.5 * h : h;
}

} // namespace fkp
