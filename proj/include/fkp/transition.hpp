#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>

#include "fkp/model.hpp"
#include "fkp/numeric.hpp"

namespace fkp {

enum class TransitionFamily { bm, ou };

/// Closed-form transition density of dY = σ dW - θ Y dt in d = 1
/// (θ = 0 is scaled Brownian motion).
struct TransitionKernel {
  TransitionFamily family = TransitionFamily::bm;
  double sigma = 1.0;
  double theta = 0.0;

  static TransitionKernel bm(double sigma) { return {TransitionFamily::bm, sigma, 0.0}; }
  static TransitionKernel ou(double theta, double sigma) { return {TransitionFamily::ou, sigma, theta}; }

  /// Kernel matching the problem's linear diffusion; d = 1 only.
  static TransitionKernel for_problem(const ProblemSpec& spec) {
    require(spec.dim == 1, "transition kernels are one-dimensional");
    if (!spec.diffusion) throw std::invalid_argument("problem has no closed-form transition density");
    const auto& lin = *spec.diffusion;
    return lin.theta == 0.0 ? bm(lin.sigma) : ou(lin.theta, lin.sigma);
  }

  /// Mean of Y_t given Y_s = x0.
  double mean(double s, double x0, double t) const {
    return family == TransitionFamily::bm ? x0 : x0 * std::exp(-theta * (t - s));
  }
  /// Variance of Y_t given Y_s.
  double variance(double s, double t) const {
    const double lag = t - s;
    if (family == TransitionFamily::bm || theta == 0.0) return sigma * sigma * lag;
    return sigma * sigma * -std::expm1(-2.0 * theta * lag) / (2.0 * theta);
  }

  /// p(s, x0, t, x) for s < t.
  double density(double s, double x0, double t, double x) const {
    require(t > s, "transition density needs t > s");
    return normal_pdf(x, mean(s, x0, t), std::sqrt(variance(s, t)));
  }
  /// ∂_x p(s, x0, t, x).
  double density_dx(double s, double x0, double t, double x) const {
    const double v = variance(s, t), m = mean(s, x0, t);
    return -(x - m) / v * density(s, x0, t, x);
  }

  /// Law of Y_t when Y_0 ~ N(mean0, sd0²): returns (mean, variance).
  std::pair<double, double> gaussian_marginal(double mean0, double sd0, double t) const {
    const double a = family == TransitionFamily::bm ? 1.0 : std::exp(-theta * t);
    return {mean0 * a, sd0 * sd0 * a * a + variance(0.0, t)};
  }
};

/// Constants of a Gaussian-type bound |∂^m p| <= C (t-s)^{-(1+|m|)/2} e^{-c |x - x0|² / (t-s)}.
struct GradientBoundFit {
  double c_u = 0.0;
  double c_density = 0.0;   // C for m = (0, 0)
  double c_gradient = 0.0;  // C for m = (0, 1)
  double C_u() const noexcept { return std::max(c_density, c_gradient); }
  /// Ĉ = C_grad √(π / c_u): the L¹ mass of the gradient bound times √(t-s).
  double c_hat() const noexcept { return c_gradient * std::sqrt(pi / c_u); }
  /// C̄ = C_density √(π / c_u): the L¹ mass of the density bound.
  double c_bar() const noexcept { return c_density * std::sqrt(pi / c_u); }
};

/// Fits the bound constants on a probe grid of lags in (0, T], starting
/// points |x0| <= x0_max and offsets up to 8 standard deviations. The rate c_u
/// is fixed at a quarter of the Brownian rate 1/(2σ²); the amplitudes are the
/// grid maxima times `margin`.
inline GradientBoundFit fit_gradient_bound(const TransitionKernel& tk, double horizon, double x0_max = 4.0,
                                           double margin = 1.1) {
  require(horizon > 0.0, "fit_gradient_bound needs a positive horizon");
  GradientBoundFit fit;
  fit.c_u = 1.0 / (4.0 * tk.sigma * tk.sigma);
  constexpr int lags = 60, starts = 41, offsets = 401;
  for (int a = 1; a <= lags; ++a) {
    const double lag = horizon * std::pow(10.0, -4.0 * (1.0 - static_cast<double>(a) / lags));
    const double sd = std::sqrt(tk.variance(0.0, lag));
    for (int b = 0; b < starts; ++b) {
      const double x0 = x0_max * (2.0 * b / (starts - 1.0) - 1.0);
      const double center = tk.mean(0.0, x0, lag);
      for (int c = 0; c < offsets; ++c) {
        const double x = center + 8.0 * sd * (2.0 * c / (offsets - 1.0) - 1.0);
        const double env = std::exp(fit.c_u * (x - x0) * (x - x0) / lag);
        fit.c_density = std::max(fit.c_density, tk.density(0.0, x0, lag, x) * std::sqrt(lag) * env);
        fit.c_gradient = std::max(fit.c_gradient, std::abs(tk.density_dx(0.0, x0, lag, x)) * lag * env);
      }
    }
  }
  fit.c_density *= margin;
  fit.c_gradient *= margin;
  return fit;
}

/// max_x |∫ p(s, x0, θ, z) p(θ, z, t, x) dz - p(s, x0, t, x)| over `xs`, the
/// z-integral by the trapezoid rule over 12 standard deviations.
inline double chapman_kolmogorov_defect(const TransitionKernel& tk, double s, double mid, double t, double x0,
                                        std::span<const double> xs, std::size_t points = 4001) {
  require(s < mid && mid < t, "Chapman-Kolmogorov check needs s < mid < t");
  const double m = tk.mean(s, x0, mid), sd = std::sqrt(tk.variance(s, mid));
  const double lo = m - 12.0 * sd, h = 24.0 * sd / static_cast<double>(points - 1);
  double worst = 0.0;
  for (double x : xs) {
    CompensatedSum acc;
    for (std::size_t j = 0; j < points; ++j) {
      const double z = lo + h * static_cast<double>(j);
      acc.add(trapezoid_weight(j, points, h) * tk.density(s, x0, mid, z) * tk.density(mid, z, t, x));
    }
    worst = std::max(worst, std::abs(acc.value() - tk.density(s, x0, t, x)));
  }
  return worst;
}

} // namespace fkp
