#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fkp/field.hpp"
#include "fkp/kernel.hpp"
#include "fkp/model.hpp"
#include "fkp/numeric.hpp"
#include "fkp/parallel.hpp"
#include "fkp/sde.hpp"
#include "fkp/transition.hpp"

namespace fkp {

class ConvergenceError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Uniform grid x_j = -L + j h on [-L, L].
struct Grid1D {
  double half_width = 1.0;
  std::size_t points = 2;

  Grid1D() = default;
  Grid1D(double L, std::size_t m) : half_width(L), points(m) {
    require(L > 0.0 && std::isfinite(L), "grid half width must be positive");
    require(m >= 3, "grid needs at least 3 points");
  }
  double step() const { return 2.0 * half_width / static_cast<double>(points - 1); }
  double x(std::size_t j) const { return -half_width + step() * static_cast<double>(j); }
  std::vector<double> nodes() const {
    std::vector<double> xs(points);
    for (std::size_t j = 0; j < points; ++j) xs[j] = x(j);
    return xs;
  }
  double weight(std::size_t j) const { return trapezoid_weight(j, points, step()); }
  bool operator==(const Grid1D&) const = default;
};

/// Trapezoid integral of samples on the grid.
inline double integrate(const Grid1D& grid, std::span<const double> f) {
  require(f.size() == grid.points, "grid function size mismatch");
  CompensatedSum s;
  for (std::size_t j = 0; j < f.size(); ++j) s.add(grid.weight(j) * f[j]);
  return s.value();
}

inline double l1_norm(const Grid1D& grid, std::span<const double> f) {
  require(f.size() == grid.points, "grid function size mismatch");
  CompensatedSum s;
  for (std::size_t j = 0; j < f.size(); ++j) s.add(grid.weight(j) * std::abs(f[j]));
  return s.value();
}

/// Second-order central differences, one-sided second order at the ends.
inline void central_difference(const Grid1D& grid, std::span<const double> f, std::span<double> out) {
  const std::size_t m = grid.points;
  const double h = grid.step();
  for (std::size_t j = 1; j + 1 < m; ++j) out[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
  out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
  out[m - 1] = (3.0 * f[m - 1] - 4.0 * f[m - 2] + f[m - 3]) / (2.0 * h);
}

/// Values and gradients of a function on grid × {t_0, ..., t_K}; row k holds
/// time t_k. Rows are stored contiguously.
struct GridPath {
  std::size_t points = 0;
  std::vector<double> times;
  std::vector<double> u, grad;

  GridPath() = default;
  GridPath(std::size_t m, std::vector<double> ts)
      : points(m), times(std::move(ts)), u(times.size() * m, 0.0), grad(times.size() * m, 0.0) {}

  std::size_t rows() const noexcept { return times.size(); }
  std::span<double> u_at(std::size_t k) { return {u.data() + k * points, points}; }
  std::span<const double> u_at(std::size_t k) const { return {u.data() + k * points, points}; }
  std::span<double> grad_at(std::size_t k) { return {grad.data() + k * points, points}; }
  std::span<const double> grad_at(std::size_t k) const { return {grad.data() + k * points, points}; }
};

/// Banded one-step transition operator on the grid: (P f)(x_j) = Σ_i p(x_i → x_j) w_i f_i
/// and the same with ∂_x p, for a fixed lag δt. Rows are cut at `band_sd`
/// transition standard deviations.
class Propagator {
public:
  Propagator(const TransitionKernel& tk, const Grid1D& grid, double lag, double band_sd = 12.0)
      : grid_(grid), lag_(lag) {
    require(lag > 0.0, "propagator lag must be positive");
    const double sd = std::sqrt(tk.variance(0.0, lag));
    if (sd / grid.step() < 1.0)
      throw std::invalid_argument("grid too coarse for the time step: need sigma*sqrt(dt) >= grid step");
    const std::size_t m = grid.points;
    const double h = grid.step(), a = tk.mean(0.0, 1.0, lag);  // mean(x0) = a x0
    row_begin_.resize(m + 1);
    first_.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double xj = grid.x(j);
      const double lo = (xj - band_sd * sd) / a, hi = (xj + band_sd * sd) / a;
      const auto i0 = static_cast<std::int64_t>(std::ceil((lo + grid.half_width) / h));
      const auto i1 = static_cast<std::int64_t>(std::floor((hi + grid.half_width) / h));
      const auto b = static_cast<std::size_t>(std::clamp<std::int64_t>(i0, 0, static_cast<std::int64_t>(m)));
      const auto e = static_cast<std::size_t>(std::clamp<std::int64_t>(i1 + 1, static_cast<std::int64_t>(b),
                                                                        static_cast<std::int64_t>(m)));
      first_[j] = b;
      row_begin_[j] = value_.size();
      for (std::size_t i = b; i < e; ++i) {
        const double xi = grid.x(i), w = grid.weight(i);
        value_.push_back(w * tk.density(0.0, xi, lag, xj));
        dx_.push_back(w * tk.density_dx(0.0, xi, lag, xj));
      }
    }
    row_begin_[m] = value_.size();
  }

  const Grid1D& grid() const noexcept { return grid_; }
  double lag() const noexcept { return lag_; }

  void apply(std::span<const double> f, std::span<double> out) const { apply_rows(value_, f, out); }
  void apply_dx(std::span<const double> f, std::span<double> out) const { apply_rows(dx_, f, out); }

private:
  void apply_rows(const std::vector<double>& coef, std::span<const double> f, std::span<double> out) const {
    parallel_for(grid_.points, [&](std::size_t j) {
      const std::size_t b = row_begin_[j], e = row_begin_[j + 1], i0 = first_[j];
      double acc = 0.0;
      for (std::size_t r = b; r < e; ++r) acc += coef[r] * f[i0 + (r - b)];
      out[j] = acc;
    });
  }

  Grid1D grid_;
  double lag_;
  std::vector<std::size_t> row_begin_, first_;
  std::vector<double> value_, dx_;
};

/// Discrete convolution with K_ε and ∇K_ε on the grid (d = 1), cut at
/// `band` bandwidths.
class GridSmoother {
public:
  GridSmoother(const KernelFamily& kernel, const Grid1D& grid, double band = 10.0) : grid_(grid) {
    require(kernel.dim == 1, "grid smoothing is one-dimensional");
    const double h = grid.step();
    reach_ = static_cast<std::size_t>(std::ceil(band * kernel.epsilon / h));
    value_.resize(2 * reach_ + 1);
    grad_.resize(2 * reach_ + 1);
    for (std::size_t r = 0; r <= 2 * reach_; ++r) {
      const double dx = (static_cast<double>(r) - static_cast<double>(reach_)) * h;
      value_[r] = kernel(std::span<const double>(&dx, 1));
      kernel.gradient(std::span<const double>(&dx, 1), std::span<double>(&grad_[r], 1));
    }
  }

  /// out_u = K_ε ∗ f, out_g = ∇K_ε ∗ f by the trapezoid rule.
  void apply(std::span<const double> f, std::span<double> out_u, std::span<double> out_g) const {
    const std::size_t m = grid_.points;
    parallel_for(m, [&](std::size_t j) {
      const std::size_t lo = j >= reach_ ? j - reach_ : 0, hi = std::min(m - 1, j + reach_);
      double su = 0.0, sg = 0.0;
      for (std::size_t i = lo; i <= hi; ++i) {
        const double wf = grid_.weight(i) * f[i];
        const std::size_t r = j + reach_ - i;  // offset x_j - x_i
        su += value_[r] * wf;
        sg += grad_[r] * wf;
      }
      out_u[j] = su;
      out_g[j] = sg;
    });
  }

private:
  Grid1D grid_;
  std::size_t reach_ = 0;
  std::vector<double> value_, grad_;
};

enum class TauMode { total_variation, sobolev };

/// Subinterval length for the Picard construction.
///   total_variation: 1 / (2 M_Λ)
///   sobolev:         min(√(1/(6M_Λ)), (1/(12 Ĉ M_Λ))^{2/3}, 1/(6 C̄ M_Λ))
inline double compute_tau(double lambda_sup, TauMode mode, double c_hat = 0.0, double c_bar = 0.0) {
  if (!(lambda_sup > 0.0)) throw std::invalid_argument("compute_tau needs M_Lambda > 0");
  if (mode == TauMode::total_variation) return 1.0 / (2.0 * lambda_sup);
  require(c_hat > 0.0 && c_bar > 0.0, "sobolev tau needs positive constants C_hat and C_bar");
  return std::min({std::sqrt(1.0 / (6.0 * lambda_sup)), std::pow(1.0 / (12.0 * c_hat * lambda_sup), 2.0 / 3.0),
                   1.0 / (6.0 * c_bar * lambda_sup)});
}

inline double compute_tau(const ProblemSpec& spec, TauMode mode, const std::optional<GradientBoundFit>& fit = {}) {
  if (mode == TauMode::sobolev) {
    const GradientBoundFit f = fit ? *fit : fit_gradient_bound(TransitionKernel::for_problem(spec), spec.horizon);
    return compute_tau(spec.bounds.lambda_sup, mode, f.c_hat(), f.c_bar());
  }
  return compute_tau(spec.bounds.lambda_sup, mode);
}

struct OracleConfig {
  std::size_t points = 1025;
  double half_width = 0.0;  // 0: chosen from u0 and the transition law
  double dt = 1e-3;
  double tol = 1e-10;
  std::size_t max_sweeps = 200;
  double tau = 0.0;  // 0: half the total-variation tau
  TauMode tau_mode = TauMode::total_variation;
  std::optional<double> horizon;  // defaults to the problem horizon
  double band_sd = 12.0;
  /// Regularized mode: Λ sees K_ε ∗ β and ∇K_ε ∗ β; the output fields are
  /// smoothed by K_ε as well.
  std::optional<double> epsilon;

  bool operator==(const OracleConfig&) const = default;
};

struct SubintervalSolution {
  GridPath u;  // u = û₀ + v
  GridPath density;  // regularized mode: the measure iterate γ (u holds K_ε ∗ γ)
  std::vector<double> residuals;
  std::size_t sweeps = 0;
};

/// Oracle solution on [0, T].
struct GridSolution {
  Grid1D grid;
  GridPath u;
  std::vector<double> density;  // regularized mode only, rows as in u
  std::vector<double> subinterval_starts;
  double tau = 0.0;
  double dt = 0.0;
  std::vector<std::vector<double>> residuals;  // per subinterval
  std::vector<std::size_t> sweeps;
  std::optional<double> epsilon;

  std::size_t rows() const noexcept { return u.rows(); }
  std::span<const double> u_at(std::size_t k) const { return u.u_at(k); }
  std::span<const double> grad_at(std::size_t k) const { return u.grad_at(k); }
  std::size_t index_of(double t) const {
    const auto& ts = u.times;
    const auto it = std::min_element(ts.begin(), ts.end(),
                                     [t](double a, double b) { return std::abs(a - t) < std::abs(b - t); });
    return static_cast<std::size_t>(it - ts.begin());
  }
  double mass_at(std::size_t k) const { return integrate(grid, u_at(k)); }
};

namespace detail {

/// Free evolution of (φ, ∇φ) over `steps` applications of the propagator.
inline GridPath free_evolution(const Propagator& prop, double r, std::size_t steps, std::span<const double> phi,
                               std::span<const double> grad_phi) {
  std::vector<double> ts(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) ts[k] = r + static_cast<double>(k) * prop.lag();
  GridPath out(prop.grid().points, std::move(ts));
  std::copy(phi.begin(), phi.end(), out.u_at(0).begin());
  std::copy(grad_phi.begin(), grad_phi.end(), out.grad_at(0).begin());
  for (std::size_t k = 0; k < steps; ++k) {
    prop.apply(out.u_at(k), out.u_at(k + 1));
    prop.apply_dx(out.u_at(k), out.grad_at(k + 1));
  }
  return out;
}

/// f_k = Λ(t_k, x, ŷ, ẑ) β̂ on one time row. In the regularized case (ŷ, ẑ)
/// are the smoothed fields, otherwise they are β̂ and ∇β̂ themselves.
inline void source_row(const ProblemSpec& spec, const Grid1D& grid, double t, std::span<const double> beta,
                       std::span<const double> y, std::span<const double> z, std::span<double> out) {
  parallel_for(grid.points, [&](std::size_t j) {
    const double x = grid.x(j);
    const double lam = spec.lambda(t, std::span<const double>(&x, 1), y[j], z.subspan(j, 1));
    out[j] = lam * beta[j];
  });
}

} // namespace detail

/// One application of Π on [r, r + K δt]: given the iterate v and the free
/// evolution û₀ on the same time rows, returns Π(v) and ∇Π(v). The time
/// integral uses the trapezoid rule; the spatial integrals are exact
/// Gaussian propagations on the grid.
inline GridPath picard_step(const ProblemSpec& spec, const Propagator& prop, const GridPath& v,
                            const GridPath& u0_hat, const GridSmoother* smoother = nullptr) {
  require(v.rows() == u0_hat.rows() && v.points == u0_hat.points, "iterate and free evolution shapes differ");
  const Grid1D& grid = prop.grid();
  const std::size_t m = grid.points, rows = v.rows();
  const double half = 0.5 * prop.lag();
  GridPath out(m, v.times);
  if (rows <= 1) return out;

  std::vector<double> beta(m), dbeta(m), y(m), z(m), f_cur(m), f_next(m), tmp(m), df(m);
  auto source = [&](std::size_t k, std::span<double> f) {
    for (std::size_t j = 0; j < m; ++j) {
      beta[j] = v.u_at(k)[j] + u0_hat.u_at(k)[j];
      dbeta[j] = v.grad_at(k)[j] + u0_hat.grad_at(k)[j];
    }
    if (smoother) {
      smoother->apply(beta, y, z);
      detail::source_row(spec, grid, v.times[k], beta, y, z, f);
    } else {
      detail::source_row(spec, grid, v.times[k], beta, beta, dbeta, f);
    }
  };

  source(0, f_cur);
  for (std::size_t k = 0; k + 1 < rows; ++k) {
    source(k + 1, f_next);
    for (std::size_t j = 0; j < m; ++j) tmp[j] = out.u_at(k)[j] + half * f_cur[j];
    prop.apply(tmp, out.u_at(k + 1));
    prop.apply_dx(tmp, out.grad_at(k + 1));
    central_difference(grid, f_next, df);
    for (std::size_t j = 0; j < m; ++j) {
      out.u_at(k + 1)[j] += half * f_next[j];
      out.grad_at(k + 1)[j] += half * df[j];
    }
    std::swap(f_cur, f_next);
  }
  if (!all_finite(out.u) || !all_finite(out.grad)) throw NumericalError("Picard iterate is not finite");
  return out;
}

/// Π_ε: as `picard_step` with Λ evaluated at the K_ε-smoothed iterate.
inline GridPath regularized_picard_step(const ProblemSpec& spec, const Propagator& prop, const GridPath& beta,
                                        const GridPath& u0_hat, const GridSmoother& smoother) {
  return picard_step(spec, prop, beta, u0_hat, &smoother);
}

namespace detail {

/// Time-trapezoid of ‖Δu‖₁ (+ ‖Δ∇u‖₁ when `with_gradient`).
inline double path_distance(const Grid1D& grid, const GridPath& a, const GridPath& b, double dt, bool with_gradient) {
  CompensatedSum s;
  std::vector<double> diff(grid.points);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t j = 0; j < grid.points; ++j) diff[j] = a.u_at(k)[j] - b.u_at(k)[j];
    double row = l1_norm(grid, diff);
    if (with_gradient) {
      for (std::size_t j = 0; j < grid.points; ++j) diff[j] = a.grad_at(k)[j] - b.grad_at(k)[j];
      row += l1_norm(grid, diff);
    }
    s.add(trapezoid_weight(k, a.rows(), dt) * row);
  }
  return s.value();
}

} // namespace detail

/// Picard iteration of Π from v = 0 on [r, r + steps δt] with initial data
/// (φ, ∇φ). Converged when the W^{1,1}-in-space, L¹-in-time change drops
/// below tol (total variation only in regularized mode).
inline SubintervalSolution solve_subinterval(const ProblemSpec& spec, const Propagator& prop, double r,
                                             std::size_t steps, std::span<const double> phi,
                                             std::span<const double> grad_phi, double tol, std::size_t max_sweeps,
                                             const GridSmoother* smoother = nullptr) {
  require(tol > 0.0, "Picard tolerance must be positive");
  const Grid1D& grid = prop.grid();
  const GridPath u0_hat = detail::free_evolution(prop, r, steps, phi, grad_phi);
  GridPath v(grid.points, u0_hat.times);
  SubintervalSolution out;
  bool converged = false;
  for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
    GridPath next = picard_step(spec, prop, v, u0_hat, smoother);
    const double res = detail::path_distance(grid, next, v, prop.lag(), smoother == nullptr);
    out.residuals.push_back(res);
    v = std::move(next);
    out.sweeps = sweep;
    if (res < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) throw ConvergenceError("Picard iteration did not converge within max_sweeps");

  for (std::size_t i = 0; i < v.u.size(); ++i) {
    v.u[i] += u0_hat.u[i];
    v.grad[i] += u0_hat.grad[i];
  }
  if (smoother) {
    out.density = v;
    out.u = GridPath(grid.points, v.times);
    for (std::size_t k = 0; k < v.rows(); ++k) smoother->apply(v.u_at(k), out.u.u_at(k), out.u.grad_at(k));
  } else {
    out.u = std::move(v);
  }
  return out;
}

/// Half width covering the free evolution of a Gaussian u0 up to a 10⁻⁸ tail.
inline double default_half_width(const ProblemSpec& spec, double horizon) {
  const auto& gp = spec.init_density.gaussian_params();
  if (!gp) throw std::invalid_argument("oracle grid half width must be given for non-Gaussian u0");
  const TransitionKernel tk = TransitionKernel::for_problem(spec);
  double sd_max = gp->sd;
  for (double t : {0.0, horizon}) {
    const auto [m, var] = tk.gaussian_marginal(gp->mean[0], gp->sd, t);
    sd_max = std::max(sd_max, std::sqrt(var));
  }
  return std::abs(gp->mean[0]) + 6.0 * sd_max;
}

/// Oracle on [0, T]: subintervals of length τ glued at multiples of τ, each
/// restarted from the previous endpoint.
inline GridSolution solve(const ProblemSpec& spec, const OracleConfig& cfg = {}) {
  check_problem(spec);
  require(spec.dim == 1, "the oracle is one-dimensional");
  const TransitionKernel tk = TransitionKernel::for_problem(spec);
  const double horizon = cfg.horizon.value_or(spec.horizon);
  require(horizon >= 0.0, "oracle horizon must be nonnegative");
  require(cfg.dt > 0.0, "oracle dt must be positive");
  const double L = cfg.half_width > 0.0 ? cfg.half_width : default_half_width(spec, horizon);

  GridSolution sol;
  sol.grid = Grid1D(L, cfg.points);
  sol.epsilon = cfg.epsilon;
  const Grid1D& grid = sol.grid;
  const std::size_t m = grid.points;

  std::vector<double> phi(m), grad_phi(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double x = grid.x(j);
    phi[j] = spec.init_density(std::span<const double>(&x, 1));
  }
  if (spec.init_density.has_gradient()) {
    for (std::size_t j = 0; j < m; ++j) {
      const double x = grid.x(j);
      spec.init_density.gradient(std::span<const double>(&x, 1), std::span<double>(&grad_phi[j], 1));
    }
  } else {
    central_difference(grid, phi, grad_phi);
  }

  std::optional<KernelFamily> kernel;
  std::optional<GridSmoother> smoother;
  if (cfg.epsilon) {
    kernel = make_kernel(KernelKind::gaussian, 1, *cfg.epsilon);
    smoother.emplace(*kernel, grid);
  }

  std::vector<double> times{0.0};
  std::vector<double> u_rows, g_rows, d_rows;
  auto append_row = [](std::vector<double>& dst, std::span<const double> row) { dst.insert(dst.end(), row.begin(), row.end()); };
  if (smoother) {
    std::vector<double> su(m), sg(m);
    smoother->apply(phi, su, sg);
    append_row(u_rows, su);
    append_row(g_rows, sg);
    append_row(d_rows, phi);
  } else {
    append_row(u_rows, phi);
    append_row(g_rows, grad_phi);
  }

  if (horizon > 0.0) {
    const auto steps = static_cast<std::size_t>(std::ceil(horizon / cfg.dt - 1e-9));
    const double dt = horizon / static_cast<double>(steps);
    sol.dt = dt;
    const Propagator prop(tk, grid, dt, cfg.band_sd);

    double tau = cfg.tau;
    if (tau <= 0.0) {
      tau = spec.bounds.lambda_sup > 0.0 ? 0.5 * compute_tau(spec, cfg.tau_mode) : horizon;
    }
    const auto per = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(tau / dt + 1e-9)));
    sol.tau = static_cast<double>(per) * dt;

    std::vector<double> dens = phi;  // regularized restart data
    for (std::size_t start = 0; start < steps; start += per) {
      const std::size_t len = std::min(per, steps - start);
      const double r = static_cast<double>(start) * dt;
      sol.subinterval_starts.push_back(r);
      const auto piece = smoother ? solve_subinterval(spec, prop, r, len, dens, grad_phi, cfg.tol, cfg.max_sweeps, &*smoother)
                                  : solve_subinterval(spec, prop, r, len, phi, grad_phi, cfg.tol, cfg.max_sweeps);
      sol.residuals.push_back(piece.residuals);
      sol.sweeps.push_back(piece.sweeps);
      for (std::size_t k = 1; k <= len; ++k) {
        times.push_back(start + k == steps ? horizon : static_cast<double>(start + k) * dt);
        append_row(u_rows, piece.u.u_at(k));
        append_row(g_rows, piece.u.grad_at(k));
        if (smoother) append_row(d_rows, piece.density.u_at(k));
      }
      if (smoother) {
        const auto last = piece.density.u_at(len);
        dens.assign(last.begin(), last.end());
        const auto lg = piece.density.grad_at(len);
        grad_phi.assign(lg.begin(), lg.end());
      } else {
        const auto last = piece.u.u_at(len);
        phi.assign(last.begin(), last.end());
        const auto lg = piece.u.grad_at(len);
        grad_phi.assign(lg.begin(), lg.end());
      }
    }
  }

  sol.u.points = m;
  sol.u.times = std::move(times);
  sol.u.u = std::move(u_rows);
  sol.u.grad = std::move(g_rows);
  sol.density = std::move(d_rows);
  return sol;
}

/// Estimate of the linear Feynman-Kac functional E[φ(Y_t) exp(∫Λ̃(s, Y_s) ds)]
/// smoothed by K_ε: an independent Monte Carlo loop over Euler paths.
struct LinearFkEstimate {
  FieldValues field;
  double mass = 0.0;
};

inline LinearFkEstimate linear_fk_estimate(const ProblemSpec& spec, const KernelFamily& kernel, std::size_t n,
                                           double dt, std::uint64_t seed, std::span<const double> queries) {
  check_problem(spec);
  if (spec.lambda_dependence != LambdaDependence::none)
    throw std::invalid_argument("linear_fk_estimate needs Lambda independent of (u, grad u)");
  require(n >= 1, "linear_fk_estimate needs n >= 1");
  require(dt > 0.0, "linear_fk_estimate needs dt > 0");
  const auto steps = static_cast<std::size_t>(std::ceil(spec.horizon / dt - 1e-9));
  const double h = spec.horizon / static_cast<double>(steps);
  const RngPolicy rng(seed);
  EnsembleState state = sample_initial(spec, n, rng);
  std::vector<double> w(n, 0.0);
  const std::vector<double> no_gradient(spec.dim, 0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * h;
    parallel_for_with(
        n, [&] { return std::vector<double>(spec.dim); },
        [&](std::size_t i, std::vector<double>& x) {
          for (std::size_t c = 0; c < spec.dim; ++c) x[c] = state.at(i, c);
          w[i] += spec.lambda(t, x, 0.0, no_gradient) * h;
        });
    state = euler_step(state, spec, std::min(h, spec.horizon - state.t), rng);
  }
  LinearFkEstimate out;
  const FieldEstimate est(state, w, kernel);
  out.mass = est.mass();
  out.field = est.evaluate(queries);
  return out;
}

} // namespace fkp
