#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fkp/model.hpp"

namespace fkp {

using ParamMap = std::map<std::string, double>;

enum class ReferenceKind { none, exact, oracle };

inline std::vector<std::string> builtin_problem_names() {
  return {"bm", "ou", "const-lambda", "sin-u", "grad-coupled"};
}

/// Parameters accepted by every built-in problem.
///   T        horizon (default 1)
///   dim      state dimension (default 1)
///   sigma    diffusion Φ = σI (default 1)
///   theta    drift g = -θx (default 0, "ou" defaults to 1)
///   u0_mean  mean of the Gaussian u0 in every coordinate (default 0)
///   u0_sd    standard deviation of u0 (default 1)
/// Problem specific:
///   lambda0  const-lambda: Λ = λ0; grad-coupled: Λ = λ0 tanh(y + w Σz) (default 1)
///   w        grad-coupled gradient weight (default 0.5)
namespace detail {

inline double param(const ParamMap& p, const std::string& key, double fallback) {
  const auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

/// Gaussian marginal of the linear diffusion started from the Gaussian u0.
struct GaussianMarginal {
  double mean0, sd0, sigma, theta;
  std::size_t dim;

  double mean(double t) const { return mean0 * std::exp(-theta * t); }
  double variance(double t) const {
    const double v0 = sd0 * sd0;
    if (theta == 0.0) return v0 + sigma * sigma * t;
    const double a = std::exp(-2.0 * theta * t);
    return v0 * a + sigma * sigma * (1.0 - a) / (2.0 * theta);
  }
  double density(double t, std::span<const double> x) const {
    const double m = mean(t), v = variance(t);
    double r2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) r2 += (x[k] - m) * (x[k] - m);
    return std::exp(-0.5 * r2 / v) / std::pow(2.0 * pi * v, 0.5 * static_cast<double>(dim));
  }
};

} // namespace detail

/// Builds a registered problem. Unknown names or parameters are rejected.
inline ProblemSpec make_problem(std::string_view name, const ParamMap& params = {}) {
  static const std::set<std::string> common{"T", "dim", "sigma", "theta", "u0_mean", "u0_sd"};
  std::set<std::string> allowed = common;
  if (name == "const-lambda") allowed.insert("lambda0");
  else if (name == "grad-coupled") allowed.insert({"lambda0", "w"});
  else if (name != "bm" && name != "ou" && name != "sin-u")
    throw std::invalid_argument("unknown problem '" + std::string(name) + "'");
  for (const auto& [k, v] : params) {
    if (!allowed.count(k)) throw std::invalid_argument("problem '" + std::string(name) + "' has no parameter '" + k + "'");
    if (!std::isfinite(v)) throw std::invalid_argument("parameter '" + k + "' must be finite");
  }

  const double horizon = detail::param(params, "T", 1.0);
  const double dim_param = detail::param(params, "dim", 1.0);
  require(dim_param >= 1.0 && dim_param == std::floor(dim_param), "dim must be a positive integer");
  const auto d = static_cast<std::size_t>(dim_param);
  const double sigma = detail::param(params, "sigma", 1.0);
  const double theta = detail::param(params, "theta", name == "ou" ? 1.0 : 0.0);
  const double mean0 = detail::param(params, "u0_mean", 0.0);
  const double sd0 = detail::param(params, "u0_sd", 1.0);
  require(sigma > 0.0, "sigma must be positive");
  require(theta >= 0.0, "theta must be nonnegative");

  ProblemSpec spec;
  spec.name = std::string(name);
  spec.dim = d;
  spec.brownian_dim = d;
  spec.horizon = horizon;
  spec.phi = [sigma, d](double, std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) out[k * d + k] = sigma;
  };
  spec.g = [theta](double, std::span<const double> x, std::span<double> out) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = -theta * x[k];
  };
  spec.init_density = InitialDensity::gaussian(std::vector<double>(d, mean0), sd0);
  spec.diffusion = LinearDiffusion{sigma, theta};

  auto& b = spec.bounds;
  b.phi_sup = sigma * std::sqrt(static_cast<double>(d));
  b.phi_lipschitz = 0.0;
  b.g_sup = theta == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  b.g_lipschitz = theta;
  b.nondegeneracy = sigma * sigma;

  double lambda0 = 0.0;  // growth rate for the exact solution
  bool has_exact = false;
  if (name == "bm" || name == "ou") {
    spec.lambda = [](double, std::span<const double>, double, std::span<const double>) { return 0.0; };
    spec.lambda_dependence = LambdaDependence::none;
    has_exact = true;
  } else if (name == "const-lambda") {
    lambda0 = detail::param(params, "lambda0", 1.0);
    spec.lambda = [lambda0](double, std::span<const double>, double, std::span<const double>) { return lambda0; };
    spec.lambda_dependence = LambdaDependence::none;
    b.lambda_sup = std::abs(lambda0);
    has_exact = true;
  } else if (name == "sin-u") {
    spec.lambda = [](double, std::span<const double>, double y, std::span<const double>) { return std::sin(y); };
    spec.lambda_dependence = LambdaDependence::value;
    b.lambda_sup = 1.0;
    b.lambda_lipschitz = 1.0;
  } else {  // grad-coupled
    const double l0 = detail::param(params, "lambda0", 1.0);
    const double w = detail::param(params, "w", 0.5);
    spec.lambda = [l0, w](double, std::span<const double>, double y, std::span<const double> z) {
      double s = 0.0;
      for (double zk : z) s += zk;
      return l0 * std::tanh(y + w * s);
    };
    spec.lambda_dependence = LambdaDependence::value_and_gradient;
    b.lambda_sup = std::abs(l0);
    b.lambda_lipschitz = std::abs(l0) * std::max(1.0, std::abs(w));
  }

  if (has_exact) {
    const detail::GaussianMarginal g{mean0, sd0, sigma, theta, d};
    ExactSolution ex;
    ex.value = [g, lambda0](double t, std::span<const double> x) { return std::exp(lambda0 * t) * g.density(t, x); };
    ex.gradient = [g, lambda0](double t, std::span<const double> x, std::span<double> out) {
      const double f = std::exp(lambda0 * t) * g.density(t, x);
      const double m = g.mean(t), v = g.variance(t);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = -(x[k] - m) / v * f;
    };
    ex.mass = [lambda0](double t) { return std::exp(lambda0 * t); };
    spec.exact = std::move(ex);
  }
  check_problem(spec);
  return spec;
}

/// What a problem can be compared against.
inline ReferenceKind reference_kind(const ProblemSpec& spec) {
  if (spec.exact) return ReferenceKind::exact;
  if (spec.dim == 1 && spec.diffusion) return ReferenceKind::oracle;
  return ReferenceKind::none;
}

} // namespace fkp
