#include "support.hpp"

using namespace fkp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double l1_against(const Grid1D& grid, std::span<const double> u, auto&& exact) {
  std::vector<double> diff(grid.points);
  for (std::size_t j = 0; j < grid.points; ++j) diff[j] = u[j] - exact(grid.x(j));
  return l1_norm(grid, diff);
}

} // namespace

TEST_CASE("grid quadrature and differences", "[oracle][grid]") {
  const Grid1D grid(8.0, 801);
  CHECK(grid.step() == 0.02);
  CHECK(grid.x(0) == -8.0);
  CHECK_THAT(grid.x(800), WithinAbs(8.0, 1e-14));
  const auto xs = grid.nodes();
  std::vector<double> f(xs.size()), df(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) f[j] = normal_pdf(xs[j], 0.3, 1.1);
  const double inside = normal_cdf((8.0 - 0.3) / 1.1) - normal_cdf((-8.0 - 0.3) / 1.1);
  CHECK_THAT(integrate(grid, f), WithinAbs(inside, 1e-14));
  CHECK_THAT(l1_norm(grid, f), WithinAbs(inside, 1e-14));

  // Second order: halving h quarters the error.
  auto fd_error = [](std::size_t m) {
    const Grid1D g(4.0, m);
    std::vector<double> v(m), d(m);
    for (std::size_t j = 0; j < m; ++j) v[j] = std::sin(g.x(j));
    central_difference(g, v, d);
    double e = 0.0;
    for (std::size_t j = 0; j < m; ++j) e = std::max(e, std::abs(d[j] - std::cos(g.x(j))));
    return e;
  };
  const double ratio = fd_error(201) / fd_error(401);
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
  CHECK_THROWS_AS(Grid1D(0.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(Grid1D(1.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(integrate(grid, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("transition kernels", "[oracle][transition]") {
  const auto bm = TransitionKernel::bm(0.8), ou = TransitionKernel::ou(1.2, 0.9);
  CHECK_THAT(bm.variance(0.2, 1.2), WithinRel(0.64, 1e-15));
  CHECK_THAT(ou.mean(0.0, 2.0, 0.5), WithinRel(2.0 * std::exp(-0.6), 1e-15));
  CHECK_THAT(ou.variance(0.0, 0.5), WithinRel(0.81 * (1.0 - std::exp(-1.2)) / 2.4, 1e-14));
  // Small-lag OU variance approaches σ² lag.
  CHECK_THAT(ou.variance(0.0, 1e-9), WithinRel(0.81e-9, 1e-6));
  for (double x : {-1.0, 0.3, 2.0}) {
    const double h = 1e-6;
    CHECK_THAT(ou.density_dx(0.1, 0.5, 0.6, x),
               WithinAbs((ou.density(0.1, 0.5, 0.6, x + h) - ou.density(0.1, 0.5, 0.6, x - h)) / (2.0 * h), 1e-8));
  }
  const auto [m, v] = ou.gaussian_marginal(1.0, 0.5, 0.7);
  CHECK_THAT(m, WithinRel(std::exp(-0.84), 1e-15));
  CHECK_THAT(v, WithinRel(0.25 * std::exp(-1.68) + ou.variance(0.0, 0.7), 1e-15));
  CHECK_THROWS_AS(bm.density(1.0, 0.0, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(TransitionKernel::for_problem(make_problem("bm", {{"dim", 2}})), std::invalid_argument);
}

TEST_CASE("fitted gradient bound holds at random probes", "[oracle][transition]") {
  for (const auto& tk : {TransitionKernel::bm(1.0), TransitionKernel::ou(1.0, 0.7)}) {
    const auto fit = fit_gradient_bound(tk, 1.0);
    CHECK(fit.c_u == 1.0 / (4.0 * tk.sigma * tk.sigma));
    CHECK(fit.C_u() == std::max(fit.c_density, fit.c_gradient));
    CHECK_THAT(fit.c_hat(), WithinRel(fit.c_gradient * std::sqrt(pi / fit.c_u), 1e-15));
    const RngPolicy rng(8);
    std::vector<double> u(3);
    for (std::size_t k = 0; k < 5000; ++k) {
      rng.uniforms(StreamDomain::probe, k, 0, u);
      const double lag = std::pow(10.0, -4.0 * u[0]);
      const double x0 = 8.0 * u[1] - 4.0;
      const double x = tk.mean(0.0, x0, lag) + 8.0 * std::sqrt(tk.variance(0.0, lag)) * (2.0 * u[2] - 1.0);
      const double env = std::exp(-fit.c_u * (x - x0) * (x - x0) / lag);
      REQUIRE(tk.density(0.0, x0, lag, x) <= fit.c_density / std::sqrt(lag) * env);
      REQUIRE(std::abs(tk.density_dx(0.0, x0, lag, x)) <= fit.c_gradient / lag * env);
    }
  }
}

TEST_CASE("subinterval length", "[oracle][tau]") {
  CHECK(compute_tau(2.0, TauMode::total_variation) == 0.25);
  const double c_hat = 1.5, c_bar = 0.8, m = 2.0;
  CHECK_THAT(compute_tau(m, TauMode::sobolev, c_hat, c_bar),
             WithinRel(std::min({std::sqrt(1.0 / 12.0), std::pow(1.0 / 36.0, 2.0 / 3.0), 1.0 / 9.6}), 1e-15));
  CHECK_THROWS_AS(compute_tau(0.0, TauMode::total_variation), std::invalid_argument);
  CHECK_THROWS_AS(compute_tau(1.0, TauMode::sobolev), std::invalid_argument);
  const auto spec = make_problem("sin-u");
  CHECK(compute_tau(spec, TauMode::total_variation) == 0.5);
  const double sob = compute_tau(spec, TauMode::sobolev);
  CHECK(sob > 0.0);
  CHECK(sob < 0.5);
}

TEST_CASE("propagator advances Gaussians exactly", "[oracle]") {
  const Grid1D grid(10.0, 1001);
  const auto tk = TransitionKernel::ou(0.5, 1.0);
  const double lag = 0.05;
  const Propagator prop(tk, grid, lag);
  std::vector<double> f(grid.points), out(grid.points), dout(grid.points);
  for (std::size_t j = 0; j < grid.points; ++j) f[j] = normal_pdf(grid.x(j), 0.5, 0.8);
  prop.apply(f, out);
  prop.apply_dx(f, dout);
  const auto [m, v] = tk.gaussian_marginal(0.5, 0.8, lag);
  const double sd = std::sqrt(v);
  CHECK(l1_against(grid, out, [&](double x) { return normal_pdf(x, m, sd); }) < 1e-10);
  CHECK(l1_against(grid, dout, [&](double x) { return -(x - m) / v * normal_pdf(x, m, sd); }) < 1e-9);
  CHECK_THROWS_AS(Propagator(tk, Grid1D(10.0, 101), 1e-4), std::invalid_argument);
}

TEST_CASE("oracle with constant Lambda matches the separable solution", "[oracle]") {
  const auto spec = make_problem("const-lambda", {{"lambda0", 1.0}, {"T", 1.0}});
  OracleConfig cfg;
  cfg.points = 2048;
  cfg.dt = 1e-3;
  const auto sol = solve(spec, cfg);
  CHECK_THAT(sol.tau, WithinAbs(0.25, 1e-12));
  CHECK(sol.subinterval_starts.size() == 4);
  for (double t : {0.25, 0.5, 1.0}) {
    const std::size_t k = sol.index_of(t);
    REQUIRE_THAT(sol.u.times[k], WithinAbs(t, 1e-12));
    const double err = l1_against(sol.grid, sol.u_at(k), [&](double x) { return std::exp(t) * normal_pdf(x, 0.0, std::sqrt(1.0 + t)); });
    INFO("t = " << t);
    CHECK(err < 1e-4);
    CHECK_THAT(sol.mass_at(k), WithinRel(std::exp(t), 1e-4));
  }
}

TEST_CASE("oracle without Lambda reproduces the OU marginal", "[oracle]") {
  const auto spec = make_problem("ou", {{"theta", 1.0}, {"u0_mean", 1.0}, {"u0_sd", 0.5}});
  const auto sol = solve(spec, OracleConfig{});
  CHECK(sol.subinterval_starts.size() == 1);
  const auto tk = TransitionKernel::for_problem(spec);
  const auto [m, v] = tk.gaussian_marginal(1.0, 0.5, 1.0);
  const std::size_t last = sol.rows() - 1;
  CHECK(sol.u.times[last] == 1.0);
  CHECK(l1_against(sol.grid, sol.u_at(last), [&](double x) { return normal_pdf(x, m, std::sqrt(v)); }) < 1e-4);
  CHECK(l1_against(sol.grid, sol.grad_at(last), [&](double x) { return -(x - m) / v * normal_pdf(x, m, std::sqrt(v)); }) < 1e-3);
}

TEST_CASE("zero horizon returns the initial density", "[oracle]") {
  const auto spec = make_problem("sin-u");
  OracleConfig cfg;
  cfg.horizon = 0.0;
  const auto sol = solve(spec, cfg);
  REQUIRE(sol.rows() == 1);
  for (std::size_t j = 0; j < sol.grid.points; ++j) {
    const double x = sol.grid.x(j);
    REQUIRE(sol.u_at(0)[j] == spec.init_density(std::span<const double>(&x, 1)));
  }
}

TEST_CASE("restarting at a subinterval boundary changes nothing", "[oracle][restart]") {
  const auto spec = make_problem("sin-u", {{"T", 0.5}});
  OracleConfig whole, split;
  whole.points = split.points = 513;
  whole.dt = split.dt = 2e-3;
  whole.tol = split.tol = 1e-11;
  whole.tau = 0.5;
  split.tau = 0.25;
  const auto a = solve(spec, whole), b = solve(spec, split);
  CHECK(a.subinterval_starts.size() == 1);
  CHECK(b.subinterval_starts.size() == 2);
  REQUIRE(a.rows() == b.rows());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    std::vector<double> diff(a.grid.points);
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = a.u_at(k)[j] - b.u_at(k)[j];
    REQUIRE(l1_norm(a.grid, diff) < 10.0 * whole.tol);
  }
}

TEST_CASE("Picard residuals contract after burn-in", "[oracle]") {
  for (const char* name : {"sin-u", "grad-coupled"}) {
    const auto spec = make_problem(name, {{"T", 0.5}});
    OracleConfig cfg;
    cfg.points = 513;
    cfg.dt = 2e-3;
    const auto sol = solve(spec, cfg);
    for (const auto& res : sol.residuals) {
      REQUIRE(res.size() >= 3);
      for (std::size_t k = 3; k < res.size(); ++k) CHECK(res[k] < res[k - 1]);
      CHECK(res.back() < cfg.tol);
    }
  }
  OracleConfig tight;
  tight.points = 257;
  tight.dt = 5e-3;
  tight.max_sweeps = 1;
  CHECK_THROWS_AS(solve(make_problem("sin-u"), tight), ConvergenceError);
}

TEST_CASE("oracle stays nonnegative and its gradient is consistent", "[oracle]") {
  const auto spec = make_problem("grad-coupled", {{"T", 0.5}, {"lambda0", -1.5}});
  OracleConfig cfg;
  cfg.points = 1025;
  const auto sol = solve(spec, cfg);
  std::vector<double> fd(sol.grid.points);
  const double h = sol.grid.step();
  for (std::size_t k = 0; k < sol.rows(); k += 50) {
    for (double v : sol.u_at(k)) REQUIRE(v >= -cfg.tol);
    central_difference(sol.grid, sol.u_at(k), fd);
    std::vector<double> diff(fd.size());
    for (std::size_t j = 0; j < fd.size(); ++j) diff[j] = fd[j] - sol.grad_at(k)[j];
    CHECK(test::max_abs(diff) < 5.0 * h * h);
  }
}

TEST_CASE("regularized step equals the plain step when Lambda ignores the field", "[oracle][regularized]") {
  const auto spec = make_problem("const-lambda", {{"lambda0", 0.7}, {"T", 0.2}});
  const Grid1D grid(8.0, 401);
  const Propagator prop(TransitionKernel::bm(1.0), grid, 0.01);
  const GridSmoother smoother(make_kernel(KernelKind::gaussian, 1, 0.5), grid);
  std::vector<double> phi(grid.points), dphi(grid.points);
  for (std::size_t j = 0; j < grid.points; ++j) {
    phi[j] = normal_pdf(grid.x(j), 0.0, 1.0);
    dphi[j] = -grid.x(j) * phi[j];
  }
  const auto u0_hat = detail::free_evolution(prop, 0.0, 20, phi, dphi);
  GridPath beta(grid.points, u0_hat.times);
  for (std::size_t i = 0; i < beta.u.size(); ++i) beta.u[i] = 0.1 * u0_hat.u[i];
  const auto plain = picard_step(spec, prop, beta, u0_hat);
  const auto reg = regularized_picard_step(spec, prop, beta, u0_hat, smoother);
  CHECK(test::bitwise_equal(plain.u, reg.u));
}

TEST_CASE("one regularized iterate from zero is the weighted free evolution", "[oracle][regularized]") {
  // Two time rows: Π_ε(0)(t₁) = P[(δt/2) f₀] + (δt/2) f₁, f_k = Λ(K_ε∗û₀, ∇K_ε∗û₀) û₀, built here
  // with a dense transition matrix and direct kernel sums.
  const auto spec = make_problem("sin-u");
  const Grid1D grid(6.0, 241);
  const double dt = 0.02, eps = 0.3;
  const auto tk = TransitionKernel::bm(1.0);
  const Propagator prop(tk, grid, dt);
  const auto kernel = make_kernel(KernelKind::gaussian, 1, eps);
  const GridSmoother smoother(kernel, grid);
  std::vector<double> phi(grid.points), dphi(grid.points);
  for (std::size_t j = 0; j < grid.points; ++j) {
    phi[j] = normal_pdf(grid.x(j), 0.0, 1.0);
    dphi[j] = -grid.x(j) * phi[j];
  }
  const auto u0_hat = detail::free_evolution(prop, 0.0, 1, phi, dphi);
  const GridPath zero(grid.points, u0_hat.times);
  const auto step = regularized_picard_step(spec, prop, zero, u0_hat, smoother);

  auto source = [&](std::span<const double> beta) {
    std::vector<double> f(grid.points);
    for (std::size_t j = 0; j < grid.points; ++j) {
      double y = 0.0;
      for (std::size_t i = 0; i < grid.points; ++i) {
        const double r = grid.x(j) - grid.x(i);
        if (std::abs(r) <= 10.0 * eps + 1e-12) y += grid.weight(i) * normal_pdf(r, 0.0, eps) * beta[i];
      }
      f[j] = std::sin(y) * beta[j];
    }
    return f;
  };
  const auto f0 = source(u0_hat.u_at(0)), f1 = source(u0_hat.u_at(1));
  for (std::size_t j = 0; j < grid.points; j += 7) {
    double expected = 0.5 * dt * f1[j];
    for (std::size_t i = 0; i < grid.points; ++i)
      expected += grid.weight(i) * tk.density(0.0, grid.x(i), dt, grid.x(j)) * 0.5 * dt * f0[i];
    REQUIRE_THAT(step.u_at(1)[j], WithinAbs(expected, 1e-14));
  }
  CHECK(test::max_abs(step.u_at(0)) == 0.0);
}

TEST_CASE("regularized oracle approaches the plain oracle as the bandwidth shrinks", "[oracle][regularized]") {
  const auto spec = make_problem("sin-u", {{"T", 0.5}});
  OracleConfig cfg;
  cfg.points = 1025;
  cfg.dt = 2e-3;
  const auto plain = solve(spec, cfg);
  const std::size_t last = plain.rows() - 1;
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.2, 0.1, 0.05}) {
    auto rc = cfg;
    rc.epsilon = eps;
    const auto reg = solve(spec, rc);
    std::vector<double> diff(plain.grid.points);
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = reg.u_at(last)[j] - plain.u_at(last)[j];
    const double gap = l1_norm(plain.grid, diff);
    INFO("eps = " << eps);
    CHECK(gap < prev);
    prev = gap;
    // The density row integrates to the smoothed mass.
    CHECK_THAT(integrate(reg.grid, std::span<const double>(reg.density).subspan(last * reg.grid.points, reg.grid.points)),
               WithinRel(reg.mass_at(last), 1e-6));
  }
}

TEST_CASE("oracle input checks", "[oracle]") {
  OracleConfig cfg;
  CHECK_THROWS_AS(solve(make_problem("sin-u", {{"dim", 2}}), cfg), std::invalid_argument);
  cfg.points = 1025;
  cfg.dt = 1e-6;
  CHECK_THROWS_AS(solve(make_problem("sin-u"), cfg), std::invalid_argument);
  cfg = OracleConfig{};
  cfg.dt = 0.0;
  CHECK_THROWS_AS(solve(make_problem("sin-u"), cfg), std::invalid_argument);
}

TEST_CASE("linear Feynman-Kac estimate", "[oracle][linear]") {
  const auto kernel = make_kernel(KernelKind::gaussian, 1, 0.2);
  const Grid1D grid(7.0, 281);
  const auto q = grid.nodes();

  const auto bm = make_problem("bm");
  const auto free = linear_fk_estimate(bm, kernel, 20000, 0.05, 4, q);
  CHECK(free.mass == 1.0);
  const auto kde = estimate_field(propagate(bm, 20000, 20, RngPolicy(4)).back(), std::vector<double>(20000, 0.0), kernel, q);
  CHECK(test::max_abs_diff(free.field.u, kde.u) <= 1e-12);

  const auto growth = linear_fk_estimate(make_problem("const-lambda", {{"lambda0", 0.5}}), kernel, 1000, 0.05, 4, q);
  CHECK_THAT(growth.mass, WithinRel(std::exp(0.5), 1e-13));

  // Λ(t, x) = x on Brownian motion from 0: E exp(∫W ds) = e^{t³/6}.
  auto integrated = make_problem("bm", {{"u0_sd", 1e-9}});
  integrated.lambda = [](double, std::span<const double> x, double, std::span<const double>) { return x[0]; };
  integrated.lambda_dependence = LambdaDependence::none;
  const std::size_t n = 200000;
  const auto est = linear_fk_estimate(integrated, kernel, n, 1e-3, 12, q);
  // Var e^Z for Z ~ N(0, 1/3) is e^{2/3} - e^{1/3}.
  const double se = std::sqrt((std::exp(2.0 / 3.0) - std::exp(1.0 / 3.0)) / static_cast<double>(n));
  CHECK_THAT(est.mass, WithinAbs(std::exp(1.0 / 6.0), 5.0 * se + 1e-3));

  CHECK_THROWS_AS(linear_fk_estimate(make_problem("sin-u"), kernel, 10, 0.1, 1, q), std::invalid_argument);
}
