#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fkp/numeric.hpp"
#include "fkp/rng.hpp"

namespace fkp {

/// Φ(t, x): writes the d×p diffusion matrix row-major into `out`.
using DiffusionFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
/// g(t, x): writes the drift d-vector into `out`.
using DriftFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
/// Λ(t, x, y, z) with y the value of u and z the gradient of u at x.
using LambdaFn =
    std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>;

/// Which arguments of Λ are actually read. Solvers skip field estimation
/// when Λ ignores (y, z). User-defined coefficients should keep the default.
enum class LambdaDependence { none, value, value_and_gradient };

/// Declared constants of the coefficient triple. They are user inputs and are
/// checked by `validate_problem`, never inferred.
struct CoefficientBounds {
  double lambda_sup = 0.0;        // M_Λ
  double lambda_lipschitz = 0.0;  // L_Λ, in (y, z)
  double phi_sup = 0.0;           // M_Φ
  double g_sup = 0.0;             // M_g
  double phi_lipschitz = 0.0;     // L_Φ
  double g_lipschitz = 0.0;       // L_g
  double nondegeneracy = 1.0;     // c: eigenvalues of ΦΦᵗ are >= c
  double holder_alpha = 1.0;      // declared only
};

/// Constant-coefficient linear diffusion with closed-form transition density.
/// Present when the problem's (Φ, g) is Φ = σI, g = -θx (θ = 0 is Brownian).
struct LinearDiffusion {
  double sigma = 1.0;
  double theta = 0.0;
};

/// Isotropic Gaussian parameters of u0, when u0 is Gaussian.
struct GaussianParams {
  std::vector<double> mean;
  double sd = 1.0;
};

/// Probability density u0 with evaluation and (optionally) sampling.
class InitialDensity {
public:
  using DensityFn = std::function<double(std::span<const double>)>;
  using GradientFn = std::function<void(std::span<const double>, std::span<double>)>;
  using SamplerFn = std::function<void(const RngPolicy&, std::uint64_t index, std::span<double>)>;

  InitialDensity() = default;
  InitialDensity(std::size_t dim, DensityFn density, SamplerFn sampler = {}, GradientFn gradient = {})
      : dim_(dim), density_(std::move(density)), sampler_(std::move(sampler)),
        gradient_(std::move(gradient)) {}

  static InitialDensity gaussian(std::vector<double> mean, double sd) {
    require(sd > 0.0, "gaussian initial density needs sd > 0");
    require(!mean.empty(), "gaussian initial density needs dim >= 1");
    const std::size_t d = mean.size();
    auto density = [mean, sd](std::span<const double> x) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < mean.size(); ++k) r2 += (x[k] - mean[k]) * (x[k] - mean[k]);
      return std::exp(-0.5 * r2 / (sd * sd)) /
             std::pow(std::sqrt(2.0 * pi) * sd, static_cast<double>(mean.size()));
    };
    auto gradient = [mean, sd, density](std::span<const double> x, std::span<double> out) {
      const double f = density(x);
      for (std::size_t k = 0; k < mean.size(); ++k) out[k] = -(x[k] - mean[k]) / (sd * sd) * f;
    };
    auto sampler = [mean, sd](const RngPolicy& rng, std::uint64_t index, std::span<double> out) {
      rng.normals(StreamDomain::initial, index, 0, out);
      for (std::size_t k = 0; k < mean.size(); ++k) out[k] = mean[k] + sd * out[k];
    };
    InitialDensity u0(d, density, sampler, gradient);
    u0.gaussian_ = GaussianParams{std::move(mean), sd};
    return u0;
  }

  std::size_t dim() const noexcept { return dim_; }
  double operator()(std::span<const double> x) const { return density_(x); }
  bool has_sampler() const noexcept { return static_cast<bool>(sampler_); }
  bool has_gradient() const noexcept { return static_cast<bool>(gradient_); }

  void sample(const RngPolicy& rng, std::uint64_t index, std::span<double> out) const {
    if (!sampler_) throw std::invalid_argument("initial density has no sampler");
    sampler_(rng, index, out);
  }
  void gradient(std::span<const double> x, std::span<double> out) const {
    if (!gradient_) throw std::invalid_argument("initial density has no gradient");
    gradient_(x, out);
  }
  const std::optional<GaussianParams>& gaussian_params() const noexcept { return gaussian_; }

private:
  std::size_t dim_ = 0;
  DensityFn density_;
  SamplerFn sampler_;
  GradientFn gradient_;
  std::optional<GaussianParams> gaussian_;
};

/// Closed-form solution u(t, x), ∇u(t, x) when one is known.
struct ExactSolution {
  std::function<double(double t, std::span<const double> x)> value;
  std::function<void(double t, std::span<const double> x, std::span<double> grad)> gradient;
  std::function<double(double t)> mass;
};

/// The semilinear problem ∂_t u = L*u + u Λ(t, x, u, ∇u), u(0) = u0 on [0, T].
/// Treated as immutable once built; every member is safe to share across threads.
struct ProblemSpec {
  std::string name;
  std::size_t dim = 1;
  std::size_t brownian_dim = 1;
  DiffusionFn phi;
  DriftFn g;
  LambdaFn lambda;
  LambdaDependence lambda_dependence = LambdaDependence::value_and_gradient;
  double horizon = 1.0;
  InitialDensity init_density;
  CoefficientBounds bounds;
  std::optional<LinearDiffusion> diffusion;
  std::optional<ExactSolution> exact;
};

/// Structural checks: positive dimensions and horizon, nonnegative bounds,
/// positive nondegeneracy floor, all coefficients present.
inline void check_problem(const ProblemSpec& spec) {
  require(spec.dim >= 1 && spec.brownian_dim >= 1, "problem dimensions must be positive");
  require(spec.horizon > 0.0 && std::isfinite(spec.horizon), "problem horizon T must be positive");
  require(spec.phi && spec.g && spec.lambda, "problem is missing a coefficient");
  require(spec.init_density.dim() == spec.dim, "initial density dimension mismatch");
  const auto& b = spec.bounds;
  for (double v : {b.lambda_sup, b.lambda_lipschitz, b.phi_sup, b.g_sup, b.phi_lipschitz, b.g_lipschitz})
    require(v >= 0.0 && !std::isnan(v), "declared coefficient bounds must be nonnegative");
  require(b.nondegeneracy > 0.0, "nondegeneracy floor c must be positive");
}

struct ValidationReport {
  std::size_t probes = 0;
  double max_abs_lambda = 0.0;
  double max_lipschitz_ratio = 0.0;
  double min_diffusion_eigenvalue = std::numeric_limits<double>::infinity();
  std::optional<double> initial_mass;  // d = 1 only
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
};

/// Random probing of the declared bounds. Probe k uses its own counter-based
/// stream, so the report does not depend on evaluation order.
inline ValidationReport validate_problem(const ProblemSpec& spec, std::size_t probes, std::uint64_t seed) {
  check_problem(spec);
  require(probes >= 1, "validate_problem needs at least one probe");
  const std::size_t d = spec.dim, p = spec.brownian_dim;
  const RngPolicy rng(seed);

  ValidationReport report;
  report.probes = probes;

  double spread = 3.0;
  if (const auto& gp = spec.init_density.gaussian_params()) spread = 4.0 * gp->sd + 1.0;

  std::vector<double> uni(4 + 3 * d), x(d), z(d), z2(d), phi(d * p);
  for (std::size_t k = 0; k < probes; ++k) {
    rng.uniforms(StreamDomain::probe, k, 0, uni);
    const double t = spec.horizon * uni[0];
    for (std::size_t j = 0; j < d; ++j) x[j] = spread * (2.0 * uni[4 + j] - 1.0);
    const double y = 8.0 * uni[1] - 4.0;
    for (std::size_t j = 0; j < d; ++j) z[j] = 8.0 * uni[4 + d + j] - 4.0;
    // Every other pair is a local perturbation to catch the local slope.
    const double scale = (k % 2 == 0) ? 1e-3 : 4.0;
    const double y2 = y + scale * (2.0 * uni[2] - 1.0);
    for (std::size_t j = 0; j < d; ++j) z2[j] = z[j] + scale * (2.0 * uni[4 + 2 * d + j] - 1.0);

    const double l1 = spec.lambda(t, x, y, z);
    const double l2 = spec.lambda(t, x, y2, z2);
    report.max_abs_lambda = std::max({report.max_abs_lambda, std::abs(l1), std::abs(l2)});
    double dist = std::abs(y - y2);
    for (std::size_t j = 0; j < d; ++j) dist += std::abs(z[j] - z2[j]);
    if (dist > 0.0) report.max_lipschitz_ratio = std::max(report.max_lipschitz_ratio, std::abs(l1 - l2) / dist);

    spec.phi(t, x, phi);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        phi.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(p));
    const Eigen::MatrixXd a = m * m.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
    report.min_diffusion_eigenvalue = std::min(report.min_diffusion_eigenvalue, eig.eigenvalues().minCoeff());
  }

  if (d == 1) {
    // Trapezoid over a wide window; the window is widened until the tails vanish.
    double lo = -spread * 4.0, hi = spread * 4.0;
    if (const auto& gp = spec.init_density.gaussian_params()) {
      lo = gp->mean[0] - 12.0 * gp->sd;
      hi = gp->mean[0] + 12.0 * gp->sd;
    }
    const std::size_t n = 20001;
    const double h = (hi - lo) / static_cast<double>(n - 1);
    CompensatedSum mass;
    for (std::size_t j = 0; j < n; ++j) {
      const double xj = lo + h * static_cast<double>(j);
      mass.add(trapezoid_weight(j, n, h) * spec.init_density(std::span<const double>(&xj, 1)));
    }
    report.initial_mass = mass.value();
    if (std::abs(*report.initial_mass - 1.0) > 1e-6)
      report.violations.push_back("initial density does not integrate to 1");
  }

  const auto& b = spec.bounds;
  if (report.max_abs_lambda > b.lambda_sup * (1.0 + 1e-12) + 1e-300)
    report.violations.push_back("observed |Lambda| exceeds declared M_Lambda");
  if (report.max_lipschitz_ratio > b.lambda_lipschitz * (1.0 + 1e-9) + 1e-300)
    report.violations.push_back("observed Lipschitz ratio exceeds declared L_Lambda");
  if (report.min_diffusion_eigenvalue < b.nondegeneracy * (1.0 - 1e-12))
    report.violations.push_back("Phi Phi^T eigenvalue below declared nondegeneracy floor");
  return report;
}

/// One sample of a Λ-path.
struct LambdaSample {
  double t;
  double value;
};

/// log V_t: left-rectangle quadrature Σ_k Λ_k (t_{k+1} - t_k) of ∫_0^t Λ ds,
/// where t is the last sample time. The last sample's value is not used.
inline double log_weight_functional(std::span<const LambdaSample> path) {
  if (path.empty()) return 0.0;
  require(path.front().t == 0.0, "lambda path must start at t = 0");
  CompensatedSum acc;
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const double dt = path[k + 1].t - path[k].t;
    require(dt > 0.0, "lambda path times must be strictly increasing");
    acc.add(path[k].value * dt);
  }
  return acc.value();
}

/// V_t = exp(∫_0^t Λ ds) with the left-rectangle rule.
inline double weight_functional(std::span<const LambdaSample> path) {
  return std::exp(log_weight_functional(path));
}

} // namespace fkp
