#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "fkp/field.hpp"
#include "fkp/kernel.hpp"
#include "fkp/model.hpp"
#include "fkp/numeric.hpp"
#include "fkp/parallel.hpp"
#include "fkp/sde.hpp"

namespace fkp {

/// ε(N) = (1 / ln N)^{1/(d+4)}.
inline double epsilon_schedule(std::size_t n, std::size_t dim) {
  if (n < 3) throw std::invalid_argument("epsilon_schedule needs n >= 3");
  require(dim >= 1, "epsilon_schedule needs dim >= 1");
  return std::pow(1.0 / std::log(static_cast<double>(n)), 1.0 / (static_cast<double>(dim) + 4.0));
}

struct SolverConfig {
  std::size_t particles = 10000;
  double epsilon = 0.2;
  bool epsilon_from_schedule = false;  // use epsilon_schedule(particles, d) instead of `epsilon`
  double dt = 0.01;
  std::uint64_t seed = 1;
  std::size_t inner_iterations = 0;
  std::size_t snapshot_stride = 0;  // 0 picks a stride from the run size
  KernelKind kernel = KernelKind::gaussian;
  Summation summation = Summation::automatic;

  bool operator==(const SolverConfig&) const = default;
};

/// Particles with their accumulated log-weights w_i = ∫Λ ds.
struct WeightedEnsemble {
  EnsembleState state;
  std::vector<double> log_weights;

  double t() const noexcept { return state.t; }
};

/// (1/N) Σ e^{w_i}.
inline double mass(const WeightedEnsemble& ens) {
  if (ens.log_weights.empty()) return 0.0;
  CompensatedSum s;
  for (double w : ens.log_weights) s.add(std::exp(w));
  return s.value() / static_cast<double>(ens.log_weights.size());
}

struct PhaseTimings {
  double sample = 0.0;
  double estimate = 0.0;
  double weights = 0.0;
  double propagate = 0.0;
  double bookkeeping = 0.0;  // snapshots and mass curve
  double total = 0.0;
};

struct SolverRun {
  SolverConfig config;
  double epsilon = 0.0;
  std::size_t steps = 0;
  std::vector<std::size_t> snapshot_steps;
  std::vector<WeightedEnsemble> snapshots;
  std::vector<double> step_times;  // t_n, n = 0..steps
  std::vector<double> mass;        // mass at t_n
  /// Per step, max |Δw| after each inner iteration.
  std::vector<std::vector<double>> inner_residuals;
  std::size_t clamped_weights = 0;
  PhaseTimings timings;

  const WeightedEnsemble& final_state() const { return snapshots.back(); }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

inline std::size_t step_count(double horizon, double dt) {
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
  const double ratio = horizon / dt;
  const double steps = std::round(ratio);
  require(steps >= 1.0 && std::abs(steps * dt - horizon) <= 1e-12 * std::max(1.0, horizon),
          "dt must divide the horizon T");
  return static_cast<std::size_t>(steps);
}

inline std::size_t auto_stride(std::size_t n, std::size_t steps) {
  if (static_cast<double>(n) * static_cast<double>(steps + 1) <= 4.0e6) return 1;
  return std::max<std::size_t>(1, (steps + 9) / 10);
}

/// Λ(t, ξ_i, u_i, ∇u_i) for every particle; field may be absent when Λ
/// ignores (y, z).
inline void lambda_at_particles(const ProblemSpec& spec, double t, const EnsembleState& state,
                                const FieldValues* field, std::vector<double>& out) {
  const std::size_t d = state.dim, n = state.n;
  out.resize(n);
  parallel_for_with(
      n, [d] { return std::pair{std::vector<double>(d), std::vector<double>(d, 0.0)}; },
      [&](std::size_t i, auto& s) {
        auto& [x, z] = s;
        for (std::size_t k = 0; k < d; ++k) x[k] = state.at(i, k);
        double y = 0.0;
        if (field) {
          y = field->u[i];
          for (std::size_t k = 0; k < d; ++k) z[k] = field->grad[k * n + i];
        }
        out[i] = spec.lambda(t, x, y, z);
      });
}

} // namespace detail

/// Weighted particle scheme. Each step: estimate (u, ∇u) at the particles,
/// update w += Λ dt (optionally re-estimated `inner_iterations` times with
/// the updated weights), then advance positions by one Euler step.
inline SolverRun run(const ProblemSpec& spec, const SolverConfig& config) {
  check_problem(spec);
  require(config.particles >= 2, "solver needs at least 2 particles");
  const auto t_start = detail::Clock::now();
  const std::size_t n = config.particles, d = spec.dim;
  const std::size_t steps = detail::step_count(spec.horizon, config.dt);
  const double dt = spec.horizon / static_cast<double>(steps);

  SolverRun out;
  out.config = config;
  out.epsilon = config.epsilon_from_schedule ? epsilon_schedule(n, d) : config.epsilon;
  if (!(out.epsilon > 0.0)) throw std::invalid_argument("bandwidth must be positive");
  out.steps = steps;
  const KernelFamily kernel = make_kernel(config.kernel, d, out.epsilon);
  const std::size_t stride = config.snapshot_stride > 0 ? config.snapshot_stride : detail::auto_stride(n, steps);
  const bool needs_field = spec.lambda_dependence != LambdaDependence::none;
  const double m_lambda = spec.bounds.lambda_sup;
  const double clamp = m_lambda * spec.horizon + 10.0 * dt * m_lambda;
  const RngPolicy rng(config.seed);

  auto t0 = detail::Clock::now();
  WeightedEnsemble cur{sample_initial(spec, n, rng), std::vector<double>(n, 0.0)};
  out.timings.sample = detail::seconds_since(t0);
  auto keep = [&](std::size_t step) {
    const auto tk = detail::Clock::now();
    out.step_times.push_back(cur.state.t);
    out.mass.push_back(mass(cur));
    if (step % stride == 0 || step == steps) {
      out.snapshot_steps.push_back(step);
      out.snapshots.push_back(cur);
    }
    out.timings.bookkeeping += detail::seconds_since(tk);
  };
  keep(0);
  out.inner_residuals.resize(steps);

  std::vector<double> lam, w_next(n);
  for (std::size_t step = 0; step < steps; ++step) {
    const double t = cur.state.t;
    t0 = detail::Clock::now();
    std::optional<FieldValues> field;
    if (needs_field) field = estimate_at_particles(cur.state, cur.log_weights, kernel, config.summation);
    out.timings.estimate += detail::seconds_since(t0);

    t0 = detail::Clock::now();
    detail::lambda_at_particles(spec, t, cur.state, field ? &*field : nullptr, lam);
    for (std::size_t i = 0; i < n; ++i) w_next[i] = cur.log_weights[i] + lam[i] * dt;
    out.timings.weights += detail::seconds_since(t0);

    for (std::size_t m = 0; m < config.inner_iterations && needs_field; ++m) {
      t0 = detail::Clock::now();
      field = estimate_at_particles(cur.state, w_next, kernel, config.summation);
      out.timings.estimate += detail::seconds_since(t0);
      t0 = detail::Clock::now();
      detail::lambda_at_particles(spec, t, cur.state, &*field, lam);
      double change = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = cur.log_weights[i] + lam[i] * dt;
        change = std::max(change, std::abs(w - w_next[i]));
        w_next[i] = w;
      }
      out.inner_residuals[step].push_back(change);
      out.timings.weights += detail::seconds_since(t0);
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(w_next[i])) throw NumericalError("non-finite particle weight");
      if (std::abs(w_next[i]) > clamp) {
        w_next[i] = std::copysign(clamp, w_next[i]);
        ++out.clamped_weights;
      }
    }
    cur.log_weights.swap(w_next);

    t0 = detail::Clock::now();
    cur.state = euler_step(cur.state, spec, dt, rng);
    cur.state.t = step + 1 == steps ? spec.horizon : static_cast<double>(step + 1) * dt;
    out.timings.propagate += detail::seconds_since(t0);
    keep(step + 1);
  }
  out.timings.total = detail::seconds_since(t_start);
  return out;
}

struct FixedPointResult {
  /// log-weights at every path time, weights[k][i].
  std::vector<std::vector<double>> weights;
  std::vector<double> residuals;  // ‖w^{j+1} - w^j‖_∞
  std::size_t iterations = 0;
  bool converged = false;
};

/// Path-level fixed point of w ↦ T(w), T(w)_k = Σ_{j<k} Λ(t_j, ξ_j, u_j[w_j], ∇u_j[w_j]) Δt_j
/// over frozen particle paths. Starts from `initial` (zero weights if empty)
/// and returns the first iterate w^j with ‖T(w^j) - w^j‖_∞ < tol.
/// Non-convergence is reported in the result, not thrown.
inline FixedPointResult fixed_point_weights(const ProblemSpec& spec, std::span<const EnsembleState> path,
                                            const KernelFamily& kernel, double tol, std::size_t max_iter,
                                            std::vector<std::vector<double>> initial = {},
                                            Summation backend = Summation::automatic) {
  require(!path.empty(), "fixed_point_weights needs a nonempty path");
  require(tol > 0.0, "fixed_point_weights needs tol > 0");
  const std::size_t n = path.front().n, steps = path.size();
  for (std::size_t k = 1; k < steps; ++k)
    require(path[k].n == n && path[k].t > path[k - 1].t, "path times must increase with constant N");
  if (initial.empty()) initial.assign(steps, std::vector<double>(n, 0.0));
  require(initial.size() == steps, "initial weights must cover every path time");

  const bool needs_field = spec.lambda_dependence != LambdaDependence::none;
  auto apply = [&](const std::vector<std::vector<double>>& w) {
    std::vector<std::vector<double>> next(steps, std::vector<double>(n, 0.0));
    std::vector<double> lam;
    for (std::size_t k = 0; k + 1 < steps; ++k) {
      std::optional<FieldValues> field;
      if (needs_field) field = estimate_at_particles(path[k], w[k], kernel, backend);
      detail::lambda_at_particles(spec, path[k].t, path[k], field ? &*field : nullptr, lam);
      const double dt = path[k + 1].t - path[k].t;
      for (std::size_t i = 0; i < n; ++i) next[k + 1][i] = next[k][i] + lam[i] * dt;
    }
    return next;
  };

  FixedPointResult out;
  std::vector<std::vector<double>> w = std::move(initial);
  for (std::size_t j = 0; j <= max_iter; ++j) {
    if (j == max_iter) {
      out.weights = std::move(w);
      out.iterations = j;
      break;
    }
    auto next = apply(w);
    double change = 0.0;
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[k][i] - w[k][i]));
    if (!std::isfinite(change)) throw NumericalError("fixed-point iteration diverged");
    out.residuals.push_back(change);
    if (change < tol) {
      out.weights = std::move(w);
      out.iterations = j;
      out.converged = true;
      break;
    }
    w = std::move(next);
  }
  return out;
}

} // namespace fkp
