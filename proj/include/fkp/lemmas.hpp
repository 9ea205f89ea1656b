#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fkp/kernel.hpp"
#include "fkp/numeric.hpp"

namespace fkp {

/// Isotropic Gaussian mixture on R^d with closed-form smoothing and second
/// derivatives. Used to exercise the kernel inequalities.
struct TestDensity {
  struct Component {
    double weight;
    std::vector<double> mean;
    double sd;
  };
  std::string name;
  std::size_t dim = 1;
  std::vector<Component> components;

  double operator()(std::span<const double> x) const {
    double f = 0.0;
    for (const auto& c : components) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) r2 += (x[k] - c.mean[k]) * (x[k] - c.mean[k]);
      f += c.weight * std::exp(-0.5 * r2 / (c.sd * c.sd)) / std::pow(std::sqrt(2.0 * pi) * c.sd, static_cast<double>(dim));
    }
    return f;
  }

  /// f'' in d = 1.
  double second_derivative(double x) const {
    require(dim == 1, "second_derivative is one-dimensional");
    double f2 = 0.0;
    for (const auto& c : components) {
      const double z = (x - c.mean[0]) / c.sd;
      f2 += c.weight * normal_pdf(x, c.mean[0], c.sd) * (z * z - 1.0) / (c.sd * c.sd);
    }
    return f2;
  }

  /// G_ε ∗ f for the Gaussian kernel G: every variance grows by ε².
  TestDensity smoothed(double epsilon) const {
    TestDensity g = *this;
    for (auto& c : g.components) c.sd = std::sqrt(c.sd * c.sd + epsilon * epsilon);
    return g;
  }

  /// Half-width of a box holding all but a negligible tail.
  double extent() const {
    double r = 0.0;
    for (const auto& c : components)
      for (double m : c.mean) r = std::max(r, std::abs(m) + 14.0 * c.sd);
    return r;
  }
};

/// "gaussian": N(0, scale² I). "gaussian-mixture": two bumps along the first
/// axis, 0.4 N(-1.5 s, (0.6 s)²) + 0.6 N(s, (0.8 s)²).
inline TestDensity make_test_density(std::string_view name, std::size_t dim = 1, double scale = 1.0) {
  require(dim >= 1, "test density dimension must be positive");
  require(scale > 0.0, "test density scale must be positive");
  TestDensity f;
  f.name = std::string(name);
  f.dim = dim;
  auto at = [dim](double x0) {
    std::vector<double> m(dim, 0.0);
    m[0] = x0;
    return m;
  };
  if (name == "gaussian") {
    f.components = {{1.0, at(0.0), scale}};
  } else if (name == "gaussian-mixture") {
    f.components = {{0.4, at(-1.5 * scale), 0.6 * scale}, {0.6, at(scale), 0.8 * scale}};
  } else {
    throw std::invalid_argument("unknown test density '" + std::string(name) + "'");
  }
  return f;
}

/// Both sides of an inequality lhs <= rhs.
struct InequalityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds() const noexcept { return lhs <= rhs; }
};

/// A_d = ((2π)^{(d+1)/2} / Γ((d+1)/2))^{1/2}.
inline double carlson_constant(std::size_t d) {
  const double h = 0.5 * (static_cast<double>(d) + 1.0);
  return std::sqrt(std::pow(2.0 * pi, h) / std::tgamma(h));
}

namespace detail {

/// Trapezoid rule of fn over [-extent, extent]^d, d <= 2.
template <class Fn>
double tensor_trapezoid(std::size_t d, double extent, std::size_t points, Fn&& fn) {
  require(d == 1 || d == 2, "tensor quadrature supports d = 1 or 2");
  const double h = 2.0 * extent / static_cast<double>(points - 1);
  CompensatedSum acc;
  std::array<double, 2> x{};
  if (d == 1) {
    for (std::size_t i = 0; i < points; ++i) {
      x[0] = -extent + h * static_cast<double>(i);
      acc.add(trapezoid_weight(i, points, h) * fn(std::span<const double>(x.data(), 1)));
    }
  } else {
    for (std::size_t i = 0; i < points; ++i) {
      x[0] = -extent + h * static_cast<double>(i);
      for (std::size_t j = 0; j < points; ++j) {
        x[1] = -extent + h * static_cast<double>(j);
        acc.add(trapezoid_weight(i, points, h) * trapezoid_weight(j, points, h) * fn(std::span<const double>(x.data(), 2)));
      }
    }
  }
  const double v = acc.value();
  if (!std::isfinite(v)) throw NumericalError("quadrature diverged");
  return v;
}

inline std::size_t default_points(std::size_t d) { return d == 1 ? 40001 : 1601; }

inline double norm2(std::span<const double> x) {
  double r2 = 0.0;
  for (double v : x) r2 += v * v;
  return std::sqrt(r2);
}

} // namespace detail

/// I(f) = ∫|x|^{d+1} f by quadrature.
inline double moment_d1(const TestDensity& f) {
  const double p = static_cast<double>(f.dim) + 1.0;
  return detail::tensor_trapezoid(f.dim, f.extent(), detail::default_points(f.dim),
                                  [&](std::span<const double> x) { return std::pow(detail::norm2(x), p) * f(x); });
}

/// ‖G_ε ∗ f - f‖_p against ε² a ‖f''‖_p in d = 1, Gaussian G.
/// Quadrature on `points` nodes over [-L, L]; L defaults to the density's extent.
inline InequalityCheck kernel_bias_check(const TestDensity& f, const KernelFamily& kernel, double p = 1.0,
                                         std::size_t points = 40001, double half_width = 0.0) {
  require(f.dim == 1 && kernel.dim == 1, "kernel_bias_check is one-dimensional");
  require(p >= 1.0, "norm order must be >= 1");
  require(kernel.epsilon >= 0.0, "bandwidth must be nonnegative");
  const double L = half_width > 0.0 ? half_width : f.extent() + 14.0 * kernel.epsilon;
  const TestDensity smooth = f.smoothed(kernel.epsilon);
  const double diff = detail::tensor_trapezoid(1, L, points, [&](std::span<const double> x) {
    return std::pow(std::abs(smooth(x) - f(x)), p);
  });
  const double curv = detail::tensor_trapezoid(1, L, points, [&](std::span<const double> x) {
    return std::pow(std::abs(f.second_derivative(x[0])), p);
  });
  return {std::pow(diff, 1.0 / p), kernel.epsilon * kernel.epsilon * kernel.a * std::pow(curv, 1.0 / p)};
}

/// ∫√f against A_d I(f)^{d / (2(d+1))}, d = 1 or 2.
inline InequalityCheck carlson_check(const TestDensity& f) {
  const double d = static_cast<double>(f.dim);
  const double lhs = detail::tensor_trapezoid(f.dim, 2.0 * f.extent(), detail::default_points(f.dim),
                                              [&](std::span<const double> x) { return std::sqrt(f(x)); });
  return {lhs, carlson_constant(f.dim) * std::pow(moment_d1(f), d / (2.0 * (d + 1.0)))};
}

struct SmoothedDensityCheck {
  InequalityCheck bound;
  double epsilon_limit = 0.0;  // I(G)^{-1/(d+1)}
};

/// ∫√(G_ε ∗ f) against 2^{d/2} A_d (1 + I(f)); the bound is claimed for
/// ε <= I(G)^{-1/(d+1)}, which is returned alongside.
inline SmoothedDensityCheck smoothed_density_check(const TestDensity& f, const KernelFamily& kernel) {
  require(f.dim == kernel.dim, "kernel and density dimensions differ");
  const double d = static_cast<double>(f.dim);
  const TestDensity smooth = f.smoothed(kernel.epsilon);
  const double lhs = detail::tensor_trapezoid(f.dim, 2.0 * smooth.extent(), detail::default_points(f.dim),
                                              [&](std::span<const double> x) { return std::sqrt(smooth(x)); });
  SmoothedDensityCheck out;
  out.bound = {lhs, std::pow(2.0, 0.5 * d) * carlson_constant(f.dim) * (1.0 + moment_d1(f))};
  out.epsilon_limit = std::pow(kernel.moment_d1, -1.0 / (d + 1.0));
  return out;
}

} // namespace fkp
