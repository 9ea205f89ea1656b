// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "fkp/fkp.hpp"

using namespace fkp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double max_row_l1(const GridSolution& a, const GridSolution& b) {
  double worst = 0.0;
  std::vector<double> diff(a.grid.points);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = a.u_at(k)[j] - b.u_at(k)[j];
    worst = std::max(worst, l1_norm(a.grid, diff));
  }
  return worst;
}

// Mean L1 error of u at t = T over seeds 1..seeds.
double mean_final_error(const ProblemSpec& spec, SolverConfig sc, const Reference& ref, std::uint64_t seeds) {
  double sum = 0.0;
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    sc.seed = s;
    sum += compare_run(run(spec, sc), ref).l1_u.back();
  }
  return sum / static_cast<double>(seeds);
}

Outcome conservative_reduction() {
  RunConfig c;
  c.solver.particles = 100000;
  c.solver.epsilon = 0.2;
  c.solver.dt = 0.01;
  const auto spec = c.make_spec();
  const Reference ref(spec, c);
  bool zero = true, unit = true;
  double err = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    auto sc = c.solver;
    sc.seed = s;
    const auto r = run(spec, sc);
    for (const auto& snap : r.snapshots)
      for (double w : snap.log_weights) zero = zero && w == 0.0;
    for (double m : r.mass) unit = unit && m == 1.0;
    err += compare_run(r, ref).l1_u.back() / 5.0;
  }
  return {zero && unit && err <= 0.05,
          fmt("weights all zero=%s, mass==1=%s, mean L1(u(1)) = %.4g (<= 0.05)", zero ? "yes" : "no",
              unit ? "yes" : "no", err)};
}

Outcome exponential_mass() {
  double worst = 0.0;
  for (double c : {1.0, -0.7, 2.0}) {
    const auto spec = make_problem("const-lambda", {{"lambda0", c}});
    for (std::size_t n : {2u, 100u, 10000u}) {
      SolverConfig sc;
      sc.particles = n;
      sc.dt = 0.01;
      const auto r = run(spec, sc);
      for (std::size_t k = 0; k < r.mass.size(); ++k) {
        const double exact = std::exp(c * r.step_times[k]);
        worst = std::max(worst, std::abs(r.mass[k] - exact) / exact);
      }
    }
  }
  return {worst <= 1e-12, fmt("max relative mass error %.3g over c in {1,-0.7,2}, N in {2,100,1e4} (<= 1e-12)", worst)};
}

Outcome semilinear_closed_form() {
  RunConfig c;
  c.problem = "const-lambda";
  c.params["lambda0"] = 1.0;
  c.solver.particles = 100000;
  c.solver.epsilon = 0.2;
  c.solver.dt = 0.01;
  const auto spec = c.make_spec();
  const double err = mean_final_error(spec, c.solver, Reference(spec, c), 5);
  return {err <= 0.15, fmt("mean L1(u(1) - e N(0,2)) = %.4g (<= 0.15)", err)};
}

Outcome oracle_self_validation() {
  const auto spec = make_problem("sin-u", {{"T", 0.5}});
  const double tau = compute_tau(spec, TauMode::total_variation);

  OracleConfig first;
  first.points = 1025;
  first.horizon = tau;
  first.tau = tau;
  const auto one = solve(spec, first);
  const double residual = one.residuals.front().back();

  OracleConfig whole, split;
  whole.points = split.points = 1025;
  whole.tau = 0.5;
  split.tau = 0.125;
  const double restart = max_row_l1(solve(spec, whole), solve(spec, split));

  // Space-time refinement: M intervals with δt = T / (M / 4), so both h and δt halve.
  std::vector<GridSolution> levels;
  for (std::size_t m : {256u, 512u, 1024u}) {
    OracleConfig cfg;
    cfg.points = m + 1;
    cfg.dt = 0.5 / static_cast<double>(m / 4);
    levels.push_back(solve(spec, cfg));
  }
  auto coarse_gap = [](const GridSolution& a, const GridSolution& b) {
    const std::size_t last_a = a.rows() - 1, last_b = b.rows() - 1;
    std::vector<double> diff(a.grid.points);
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = a.u_at(last_a)[j] - b.u_at(last_b)[2 * j];
    return l1_norm(a.grid, diff);
  };
  const double g1 = coarse_gap(levels[0], levels[1]), g2 = coarse_gap(levels[1], levels[2]);
  const double order = std::log2(g1 / g2);
  const bool ok = residual < 1e-8 && restart <= 1e-7 && order >= 1.7 && order <= 2.3;
  return {ok, fmt("final Picard residual on [0, tau=%.3g] = %.3g (< 1e-8); restart gap = %.3g (<= 1e-7); "
                  "observed order = %.3f (in [1.7, 2.3])",
                  tau, residual, restart, order)};
}

struct ParticleOracleResult {
  Outcome outcome;
  bool evaluated = false;
};

ParticleOracleResult particle_vs_oracle() {
  RunConfig c;
  c.problem = "sin-u";
  c.horizon = 0.5;
  c.solver.dt = 0.01;
  const auto spec = c.make_spec();
  const Reference ref(spec, c);

  std::vector<double> errs;
  for (std::size_t n : {1000u, 10000u, 100000u}) {
    auto sc = c.solver;
    sc.particles = n;
    sc.epsilon_from_schedule = true;
    errs.push_back(mean_final_error(spec, sc, ref, 5));
  }
  const bool monotone = errs[0] > errs[1] && errs[1] > errs[2];

  c.sweep_particles = {1000000};
  c.sweep_epsilons = {0.4, 0.2, 0.1, 0.05};
  c.sweep_seeds = {1, 2, 3};
  const auto res = sweep(c);
  std::string cells;
  for (const auto& cell : res.cells)
    cells += fmt(" eps=%g: err=%.4g floor=%.4g bias=%.4g;", cell.epsilon, cell.mean_error, cell.mc_floor, cell.bias);
  const double slope = res.epsilon_slope.slope;
  const bool slope_ok = std::isfinite(slope) && slope >= 0.7 && slope <= 1.3;
  return {{monotone && slope_ok,
           fmt("mean L1 at N=1e3,1e4,1e5 (eps schedule) = %.4g, %.4g, %.4g (decreasing: %s); "
               "bias eps-slope at N=1e6 = %.3f over %zu points%s (in [0.7, 1.3]);",
               errs[0], errs[1], errs[2], monotone ? "yes" : "no", slope, res.epsilon_slope.points,
               res.epsilon_slope.dropped_smallest ? ", smallest eps dropped" : "") +
               cells},
          res.cells.size() == 4};
}

ParticleOracleResult gradient_coupled() {
  RunConfig c;
  c.problem = "grad-coupled";
  c.horizon = 0.5;
  c.solver.particles = 100000;
  c.solver.epsilon = 0.2;
  c.solver.dt = 0.01;
  c.oracle_regularized = true;
  const auto spec = c.make_spec();
  const auto rep = run_compare(c);
  const auto r = run(spec, c.solver);
  bool finite = true;
  for (const auto& snap : r.snapshots) finite = finite && all_finite(snap.log_weights);
  const double m = spec.bounds.lambda_sup * spec.horizon;
  bool in_env = true;
  for (double v : r.mass) in_env = in_env && v >= std::exp(-m) && v <= std::exp(m);
  const double err = rep.l1_u.back();
  return {{finite && in_env && err <= 0.2 && rep.reference == "regularized-oracle",
           fmt("weights finite=%s, mass(T)=%.5g within [e^-%.2g, e^%.2g]=%s, L1 vs regularized oracle = %.4g (<= 0.2)",
               finite ? "yes" : "no", r.mass.back(), m, m, in_env ? "yes" : "no", err)},
          true};
}

Outcome lemma_suite() {
  bool ok = true;
  std::string notes;
  for (double sd : {0.5, 1.0, 2.0}) {
    const auto c = carlson_check(make_test_density("gaussian", 1, sd));
    ok = ok && c.holds();
    notes += fmt("carlson sd=%g %.4g<=%.4g; ", sd, c.lhs, c.rhs);
  }
  const auto f = make_test_density("gaussian", 1, 1.0);
  double prev = 0.0;
  for (double eps : {0.4, 0.2, 0.1, 0.05}) {
    const auto b = kernel_bias_check(f, make_kernel(KernelKind::gaussian, 1, eps));
    ok = ok && b.holds();
    if (prev > 0.0) {
      const double ratio = prev / b.lhs;
      ok = ok && ratio >= 3.5 && ratio <= 4.5;
      notes += fmt("bias ratio at eps=%g %.3f; ", eps, ratio);
    }
    prev = b.lhs;
  }
  for (const char* name : {"gaussian", "gaussian-mixture"}) {
    const auto g = make_test_density(name, 1, 1.0);
    const double limit = smoothed_density_check(g, make_kernel(KernelKind::gaussian, 1, 1.0)).epsilon_limit;
    for (double frac : {0.25, 0.5, 1.0}) ok = ok && smoothed_density_check(g, make_kernel(KernelKind::gaussian, 1, frac * limit)).bound.holds();
  }
  double ck = 0.0;
  const std::vector<double> xs{-3, -2, -1, -0.5, 0, 0.5, 1, 2, 3};
  for (const auto& tk : {TransitionKernel::bm(1.0), TransitionKernel::ou(1.0, 1.0)})
    for (double mid : {0.1, 0.5, 0.9})
      for (double x0 : {-1.0, 0.0, 1.5}) ck = std::max(ck, chapman_kolmogorov_defect(tk, 0.0, mid, 1.0, x0, xs));
  ok = ok && ck <= 1e-6;
  notes += fmt("smoothed-density bound checked below eps limit; Chapman-Kolmogorov defect %.3g (<= 1e-6)", ck);
  return {ok, notes};
}

Outcome determinism() {
  const auto dir = std::filesystem::temp_directory_path() / ("fkp_acceptance_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  RunConfig c;
  c.problem = "sin-u";
  c.horizon = 0.5;
  c.solver.particles = 20000;
  c.solver.epsilon = 0.2;
  c.solver.dt = 0.01;
  c.sweep_particles = {1000, 4000};
  c.sweep_epsilons = {0.3};
  c.sweep_seeds = {1, 2};
  const int original = thread_count();
  for (int threads : {1, 4}) {
    set_thread_count(threads);
    const auto sub = dir / std::to_string(threads);
    const auto rep = run_compare(c);
    write_errors_csv(rep, sub / "errors.csv");
    write_field_csv(rep, sub / "field.csv");
    write_grid_csv(solve(c.make_spec(), c.oracle), sub / "oracle.csv", 10);
    const auto sw = sweep(c);
    write_sweep_csv(sw, sub / "sweep.csv");
    write_sweep_cells_csv(sw, sub / "sweep_cells.csv");
  }
  set_thread_count(original);
  std::size_t same = 0, total = 0;
  for (const char* name : {"errors.csv", "field.csv", "oracle.csv", "sweep.csv", "sweep_cells.csv"}) {
    ++total;
    const auto a = slurp(dir / "1" / name), b = slurp(dir / "4" / name);
    if (!a.empty() && a == b) ++same;
  }
  std::filesystem::remove_all(dir);
  return {same == total, fmt("%zu of %zu CSV files byte-identical between 1 and 4 threads", same, total)};
}

} // namespace

int main() {
  int failures = 0;
  bool items_5_6_evaluated = true;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out.pass) ++failures;
    std::printf("%s %d %s: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", id, title, out.detail.c_str(), secs);
    std::fflush(stdout);
  };
  auto tracked = [&](ParticleOracleResult (*fn)()) {
    return [&items_5_6_evaluated, fn] {
      ParticleOracleResult r;
      try {
        r = fn();
      } catch (...) {
        items_5_6_evaluated = false;
        throw;
      }
      items_5_6_evaluated = items_5_6_evaluated && r.evaluated;
      return r.outcome;
    };
  };

  report(1, "conservative reduction", conservative_reduction);
  report(2, "exact exponential mass", exponential_mass);
  report(3, "closed-form semilinear check", semilinear_closed_form);
  report(4, "oracle self-validation", oracle_self_validation);
  report(5, "particle vs oracle", tracked(particle_vs_oracle));
  report(6, "gradient-coupled smoke test", tracked(gradient_coupled));
  report(7, "lemma suite", lemma_suite);
  report(8, "determinism across thread counts", determinism);
  report(9, "scaling constant caveat", [&] {
    return Outcome{items_5_6_evaluated,
                   "the constant C and the factor exp(C / eps^(d+1)) of the particle error bound are not computed "
                   "as numbers; items 5 and 6 substitute monotone-in-N and order-in-eps checks (evaluated: " +
                       std::string(items_5_6_evaluated ? "yes" : "no") + ")"};
  });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
