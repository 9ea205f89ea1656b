// fkp: particle solver, grid oracle and convergence sweeps from the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fkp/fkp.hpp"

namespace fs = std::filesystem;

namespace {

/// Flags shared by every subcommand. Unset flags leave the config file (or
/// the built-in default) alone.
struct Overrides {
  std::string config_file;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;

  std::optional<std::string> problem;
  std::optional<double> horizon;
  std::vector<std::string> params;  // key=value

  std::optional<std::size_t> particles;
  std::optional<double> epsilon;
  bool epsilon_schedule = false;
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> inner_iterations;
  std::optional<std::size_t> snapshot_stride;
  std::optional<std::string> summation;

  std::optional<std::size_t> oracle_points;
  std::optional<double> oracle_half_width;
  std::optional<double> oracle_dt;
  std::optional<double> oracle_tol;
  std::optional<std::size_t> oracle_max_sweeps;
  std::optional<double> oracle_tau;
  std::optional<std::string> oracle_tau_mode;
  bool regularized = false;
  std::optional<std::size_t> time_stride;

  std::vector<std::size_t> sweep_particles;
  std::vector<double> sweep_epsilons;
  std::vector<std::uint64_t> sweep_seeds;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_file, "INI config file")->check(CLI::ExistingFile);
  app->add_option("--out", o.out, "output directory");
  app->add_option("--threads", o.threads, "worker threads (0 = OpenMP default)");
  app->add_option("--problem", o.problem, "registered problem name");
  app->add_option("--horizon,-T", o.horizon, "time horizon T");
  app->add_option("--param,-p", o.params, "problem parameter key=value (repeatable)");
}

void add_solver(CLI::App* app, Overrides& o) {
  app->add_option("--particles,-N", o.particles, "number of particles");
  app->add_option("--epsilon", o.epsilon, "kernel bandwidth");
  app->add_flag("--epsilon-schedule", o.epsilon_schedule, "use the bandwidth schedule eps(N)");
  app->add_option("--dt", o.dt, "Euler step; must divide T");
  app->add_option("--seed", o.seed, "RNG seed");
  app->add_option("--inner-iterations", o.inner_iterations, "weight re-estimations per step");
  app->add_option("--snapshot-stride", o.snapshot_stride, "steps between snapshots (0 = auto)");
  app->add_option("--summation", o.summation, "auto, naive, cell_list or box_expansion");
}

void add_oracle(CLI::App* app, Overrides& o) {
  app->add_option("--oracle-points", o.oracle_points, "oracle grid points");
  app->add_option("--oracle-half-width", o.oracle_half_width, "oracle grid half-width L (0 = auto)");
  app->add_option("--oracle-dt", o.oracle_dt, "oracle time step");
  app->add_option("--oracle-tol", o.oracle_tol, "Picard tolerance");
  app->add_option("--oracle-max-sweeps", o.oracle_max_sweeps, "Picard sweep limit per subinterval");
  app->add_option("--oracle-tau", o.oracle_tau, "subinterval length (0 = from the bounds)");
  app->add_option("--oracle-tau-mode", o.oracle_tau_mode, "tv or sobolev");
  app->add_flag("--regularized", o.regularized, "use the bandwidth-regularized oracle");
  app->add_option("--time-stride", o.time_stride, "oracle rows between CSV dumps");
}

fkp::RunConfig build_config(const Overrides& o) {
  fkp::RunConfig c = o.config_file.empty() ? fkp::RunConfig{} : fkp::load_config(o.config_file);
  if (o.out) c.output_dir = *o.out;
  if (o.problem) c.problem = *o.problem;
  if (o.horizon) c.horizon = *o.horizon;
  for (const auto& kv : o.params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--param expects key=value, got '" + kv + "'");
    c.params[kv.substr(0, eq)] = fkp::detail::parse_double(kv.substr(0, eq), kv.substr(eq + 1));
  }
  auto& s = c.solver;
  if (o.particles) s.particles = *o.particles;
  if (o.epsilon) {
    s.epsilon = *o.epsilon;
    s.epsilon_from_schedule = false;
  }
  if (o.epsilon_schedule) s.epsilon_from_schedule = true;
  if (o.dt) s.dt = *o.dt;
  if (o.seed) s.seed = *o.seed;
  if (o.inner_iterations) s.inner_iterations = *o.inner_iterations;
  if (o.snapshot_stride) s.snapshot_stride = *o.snapshot_stride;
  if (o.summation) s.summation = fkp::parse_summation(*o.summation);
  auto& g = c.oracle;
  if (o.oracle_points) g.points = *o.oracle_points;
  if (o.oracle_half_width) g.half_width = *o.oracle_half_width;
  if (o.oracle_dt) g.dt = *o.oracle_dt;
  if (o.oracle_tol) g.tol = *o.oracle_tol;
  if (o.oracle_max_sweeps) g.max_sweeps = *o.oracle_max_sweeps;
  if (o.oracle_tau) g.tau = *o.oracle_tau;
  if (o.oracle_tau_mode) {
    if (*o.oracle_tau_mode == "tv") g.tau_mode = fkp::TauMode::total_variation;
    else if (*o.oracle_tau_mode == "sobolev") g.tau_mode = fkp::TauMode::sobolev;
    else throw std::invalid_argument("--oracle-tau-mode must be 'tv' or 'sobolev'");
  }
  if (o.regularized) c.oracle_regularized = true;
  if (o.time_stride) c.time_stride = *o.time_stride;
  if (!o.sweep_particles.empty()) c.sweep_particles = o.sweep_particles;
  if (!o.sweep_epsilons.empty()) c.sweep_epsilons = o.sweep_epsilons;
  if (!o.sweep_seeds.empty()) c.sweep_seeds = o.sweep_seeds;
  return c;
}

void finish(const fkp::RunConfig& c, const std::string& command) {
  const fs::path dir = c.output_dir;
  fkp::save_config(c, dir / "config.ini");
  fkp::write_manifest(fkp::run_manifest(c, command), dir / "manifest.json");
}

int cmd_run(const fkp::RunConfig& c) {
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  const fkp::ErrorReport rep = fkp::run_compare(c);
  fkp::write_errors_csv(rep, dir / "errors.csv");
  fkp::write_field_csv(rep, dir / "field.csv");
  fkp::write_timings_csv(rep.timings, rep.reference_seconds, dir / "timings.csv");
  finish(c, "run");
  std::printf("reference %s, N = %zu, eps = %.6g, seed = %llu\n", rep.reference.c_str(), rep.particles, rep.epsilon,
              static_cast<unsigned long long>(rep.seed));
  std::printf("t = %.6g: L1(u) = %.6g, L1(grad u) = %.6g, mass = %.10g (reference %.10g)\n", rep.times.back(),
              rep.l1_u.back(), rep.l1_grad.back(), rep.mass.back(), rep.reference_mass.back());
  if (rep.clamped_weights > 0) std::printf("warning: %zu weights clamped\n", rep.clamped_weights);
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

int cmd_oracle(const fkp::RunConfig& c) {
  c.validate();
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  const fkp::ProblemSpec spec = c.make_spec();
  fkp::OracleConfig oc = c.oracle;
  if (c.oracle_regularized) oc.epsilon = c.solver.epsilon;
  const fkp::GridSolution sol = fkp::solve(spec, oc);
  fkp::write_grid_csv(sol, dir / "oracle.csv", c.time_stride);
  fkp::write_oracle_summary_csv(sol, dir / "oracle_summary.csv");
  finish(c, "oracle");
  std::printf("grid %zu points on [-%.6g, %.6g], tau = %.6g, %zu subintervals, mass(T) = %.10g\n", sol.grid.points,
              sol.grid.half_width, sol.grid.half_width, sol.tau, sol.sweeps.size(), sol.mass_at(sol.rows() - 1));
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

int cmd_sweep(const fkp::RunConfig& c) {
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  const fkp::SweepResult res = fkp::sweep(c);
  fkp::write_sweep_csv(res, dir / "sweep.csv");
  fkp::write_sweep_cells_csv(res, dir / "sweep_cells.csv");
  fkp::write_sweep_timings_csv(res, dir / "sweep_timings.csv");
  finish(c, "sweep");
  std::size_t failed = 0;
  for (const auto& r : res.rows) failed += r.status != "ok";
  std::printf("%zu rows, %zu cells, %zu failed runs\n", res.rows.size(), res.cells.size(), failed);
  if (res.epsilon_slope.points >= 2) std::printf("bias slope in eps: %.4g\n", res.epsilon_slope.slope);
  if (res.particle_slope.points >= 2) std::printf("error slope in N: %.4g\n", res.particle_slope.slope);
  return 0;
}

int cmd_validate(const fkp::RunConfig& c, std::size_t probes) {
  const fkp::ProblemSpec spec = c.make_spec();
  const fkp::ValidationReport rep = fkp::validate_problem(spec, probes, c.solver.seed);
  std::printf("problem %s: %zu probes, max |Lambda| = %.6g, max Lipschitz ratio = %.6g, min diffusion eigenvalue = %.6g\n",
              spec.name.c_str(), rep.probes, rep.max_abs_lambda, rep.max_lipschitz_ratio, rep.min_diffusion_eigenvalue);
  if (rep.initial_mass) std::printf("initial mass %.12g\n", *rep.initial_mass);
  std::printf("%s\n", rep.ok() ? "ok" : "violations found");
  for (const auto& v : rep.violations) std::printf("  %s\n", v.c_str());
  if (!c.output_dir.empty()) {
    const fs::path dir = c.output_dir;
    auto out = fkp::detail::open_out(dir / "validation.csv");
    out << "violation\n";
    for (const auto& v : rep.violations) out << fkp::detail::csv_quote(v) << '\n';
    finish(c, "validate");
  }
  return rep.ok() ? 0 : 2;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

int cmd_kernels(const std::string& out_dir) {
  struct Row {
    std::string check, parameter;
    double lhs, rhs;
  };
  std::vector<Row> rows;
  for (double sd : {0.5, 1.0, 2.0}) {
    const auto c = fkp::carlson_check(fkp::make_test_density("gaussian", 1, sd));
    rows.push_back({"carlson", "sd=" + short_num(sd), c.lhs, c.rhs});
  }
  for (const char* name : {"gaussian", "gaussian-mixture"}) {
    const auto f = fkp::make_test_density(name, 1, 1.0);
    for (double eps : {0.4, 0.2, 0.1, 0.05}) {
      const auto b = fkp::kernel_bias_check(f, fkp::make_kernel(fkp::KernelKind::gaussian, 1, eps));
      rows.push_back({std::string("kernel_bias/") + name, "eps=" + short_num(eps), b.lhs, b.rhs});
    }
    for (double eps : {0.5, 0.25}) {
      const auto s = fkp::smoothed_density_check(f, fkp::make_kernel(fkp::KernelKind::gaussian, 1, eps));
      rows.push_back({std::string("smoothed_density/") + name, "eps=" + short_num(eps), s.bound.lhs,
                      s.bound.rhs});
    }
  }
  const std::vector<double> xs{-2.0, -0.5, 0.0, 0.7, 2.5};
  for (const auto& tk : {fkp::TransitionKernel::bm(1.0), fkp::TransitionKernel::ou(1.0, 1.0)}) {
    const double defect = fkp::chapman_kolmogorov_defect(tk, 0.0, 0.3, 1.0, 0.4, xs);
    rows.push_back({tk.family == fkp::TransitionFamily::bm ? "chapman_kolmogorov/bm" : "chapman_kolmogorov/ou",
                    "s=0,mid=0.3,t=1", defect, 1e-6});
  }

  bool all = true;
  std::printf("%-28s %-16s %14s %14s  %s\n", "check", "parameter", "lhs", "rhs", "holds");
  for (const auto& r : rows) {
    const bool ok = r.lhs <= r.rhs;
    all = all && ok;
    std::printf("%-28s %-16s %14.8g %14.8g  %s\n", r.check.c_str(), r.parameter.c_str(), r.lhs, r.rhs,
                ok ? "yes" : "NO");
  }
  if (!out_dir.empty()) {
    auto out = fkp::detail::open_out(fs::path(out_dir) / "kernels.csv");
    out << "check,parameter,lhs,rhs,holds\n";
    for (const auto& r : rows)
      out << r.check << ',' << fkp::detail::csv_quote(r.parameter) << ',' << fkp::format_double(r.lhs) << ','
          << fkp::format_double(r.rhs) << ',' << (r.lhs <= r.rhs ? "true" : "false") << '\n';
  }
  return all ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted particle solver for nonconservative nonlinear Fokker-Planck equations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FKP_VERSION);

  Overrides o;
  auto* run = app.add_subcommand("run", "single particle solve compared against the reference");
  add_common(run, o);
  add_solver(run, o);
  add_oracle(run, o);

  auto* oracle = app.add_subcommand("oracle", "deterministic grid solve of the mild equation");
  add_common(oracle, o);
  add_oracle(oracle, o);
  oracle->add_option("--epsilon", o.epsilon, "bandwidth for --regularized");

  auto* sw = app.add_subcommand("sweep", "N x eps x seed convergence matrix");
  add_common(sw, o);
  add_solver(sw, o);
  add_oracle(sw, o);
  sw->add_option("--sweep-particles", o.sweep_particles, "particle counts")->delimiter(',');
  sw->add_option("--sweep-epsilons", o.sweep_epsilons, "bandwidths")->delimiter(',');
  sw->add_option("--sweep-seeds", o.sweep_seeds, "seeds")->delimiter(',');

  std::size_t probes = 1000;
  auto* validate = app.add_subcommand("validate", "probe a problem's coefficients against its declared bounds");
  add_common(validate, o);
  validate->add_option("--probes", probes, "random probe points");
  validate->add_option("--seed", o.seed, "probe seed");

  std::string kernels_out;
  auto* kernels = app.add_subcommand("kernels", "kernel inequality and transition-density checks");
  kernels->add_option("--out", kernels_out, "directory for kernels.csv");
  kernels->add_option("--threads", o.threads, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (o.threads) fkp::set_thread_count(static_cast<int>(*o.threads));
    if (kernels->parsed()) return cmd_kernels(kernels_out);
    fkp::RunConfig c = build_config(o);
    if (validate->parsed()) {
      if (!o.out) c.output_dir.clear();
      return cmd_validate(c, probes);
    }
    if (run->parsed()) return cmd_run(c);
    if (oracle->parsed()) return cmd_oracle(c);
    if (sw->parsed()) return cmd_sweep(c);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fkp: %s\n", e.what());
    return 1;
  }
  return 0;
}
