#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>

#include "fkp/numeric.hpp"

namespace fkp {

enum class KernelKind { gaussian };

/// E|Z|^q for Z ~ N(0, I_d).
inline double gaussian_abs_moment(std::size_t d, double q) {
  const double h = 0.5 * static_cast<double>(d);
  return std::exp(0.5 * q * std::log(2.0) + std::lgamma(h + 0.5 * q) - std::lgamma(h));
}

/// Mollifier K with bandwidth ε: K_ε(x) = ε^{-d} K(x/ε).
struct KernelFamily {
  KernelKind kind = KernelKind::gaussian;
  std::size_t dim = 1;
  double epsilon = 1.0;
  double truncation_radius = 6.0;  // in units of ε

  double a = 0.5;          // ½∫|x|²K
  double a_tilde = 0.0;    // ∫|x|K
  double kappa = 0.0;      // ½∫|x|K
  double moment_d1 = 0.0;  // I(K) = ∫|x|^{d+1}K
  double grad_moment_d1 = 0.0;  // ∫|x|^{d+1}|∇K|
  double sup = 0.0;        // ‖K‖_∞
  double grad_sup = 0.0;   // ‖∇K‖_∞

  /// Base kernel K(x).
  double base(std::span<const double> x) const {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    return sup * std::exp(-0.5 * r2);
  }

  /// K_ε(x).
  double operator()(std::span<const double> x) const {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    return scaled_norm() * std::exp(-0.5 * r2 / (epsilon * epsilon));
  }

  /// ∇K_ε(x) = -(x / ε²) K_ε(x).
  void gradient(std::span<const double> x, std::span<double> out) const {
    const double k = (*this)(x);
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = -x[j] / (epsilon * epsilon) * k;
  }

  /// ε^{-d} (2π)^{-d/2}.
  double scaled_norm() const { return sup / std::pow(epsilon, static_cast<double>(dim)); }
  double cutoff() const { return truncation_radius * epsilon; }
};

inline KernelFamily make_kernel(KernelKind kind, std::size_t dim, double epsilon) {
  require(dim >= 1, "kernel dimension must be positive");
  require(epsilon > 0.0 && std::isfinite(epsilon), "kernel bandwidth must be positive");
  KernelFamily k;
  k.kind = kind;
  k.dim = dim;
  k.epsilon = epsilon;
  const double d = static_cast<double>(dim);
  k.a = 0.5 * d;
  k.a_tilde = gaussian_abs_moment(dim, 1.0);
  k.kappa = 0.5 * k.a_tilde;
  k.moment_d1 = gaussian_abs_moment(dim, d + 1.0);
  k.grad_moment_d1 = gaussian_abs_moment(dim, d + 2.0);
  k.sup = std::pow(2.0 * pi, -0.5 * d);
  k.grad_sup = k.sup * std::exp(-0.5);
  return k;
}

inline KernelKind parse_kernel_kind(std::string_view name) {
  if (name == "gaussian") return KernelKind::gaussian;
  throw std::invalid_argument("unknown kernel '" + std::string(name) + "'");
}

} // namespace fkp
