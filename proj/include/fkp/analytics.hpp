#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <sys/utsname.h>
#include <unistd.h>

#include "fkp/field.hpp"
#include "fkp/mild_oracle.hpp"
#include "fkp/particle_solver.hpp"
#include "fkp/registry.hpp"

#ifndef FKP_VERSION
#define FKP_VERSION "0.0.0"
#endif

namespace fkp {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Everything a run, oracle solve or sweep needs. Stored as an INI file; see
/// the README for the schema.
struct RunConfig {
  std::string problem = "bm";
  double horizon = 1.0;
  ParamMap params;

  SolverConfig solver;

  OracleConfig oracle;
  bool oracle_regularized = false;  // compare against the Π_ε oracle at the solver's ε

  std::string output_dir = "out";
  std::size_t time_stride = 1;  // rows of the oracle grid written to CSV

  std::vector<std::size_t> sweep_particles;
  std::vector<double> sweep_epsilons;  // empty with epsilon_schedule: ε(N)
  std::vector<std::uint64_t> sweep_seeds;

  /// dt must divide T; the parameters must build a registered problem.
  void validate() const {
    require(horizon > 0.0, "horizon must be positive");
    detail::step_count(horizon, solver.dt);
    require(!params.count("T"), "set the horizon in [problem], not as a parameter");
    make_problem(problem, problem_params());
  }

  ParamMap problem_params() const {
    ParamMap p = params;
    p["T"] = horizon;
    return p;
  }

  ProblemSpec make_spec() const { return make_problem(problem, problem_params()); }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline const char* summation_name(Summation s) {
  switch (s) {
  case Summation::naive: return "naive";
  case Summation::cell_list: return "cell_list";
  case Summation::box_expansion: return "box_expansion";
  default: return "auto";
  }
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += format_double(xs[i]);
    else out += std::to_string(xs[i]);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': not a number: '" + s + "'");
  }
  if (used != s.size()) throw std::invalid_argument("config key '" + key + "': trailing characters in '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("config key '" + key + "': not a nonnegative integer: '" + s + "'");
  return std::stoull(s);
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config key '" + key + "': not a boolean: '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

} // namespace detail

inline std::string config_to_string(const RunConfig& c) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  tree.put("problem.name", c.problem);
  tree.put("problem.horizon", format_double(c.horizon));
  pt::ptree params;
  for (const auto& [k, v] : c.params) params.put(pt::ptree::path_type(k, '\0'), format_double(v));
  if (!params.empty()) tree.put_child("params", params);

  const auto& s = c.solver;
  tree.put("solver.particles", s.particles);
  tree.put("solver.epsilon", format_double(s.epsilon));
  tree.put("solver.epsilon_schedule", s.epsilon_from_schedule ? "true" : "false");
  tree.put("solver.dt", format_double(s.dt));
  tree.put("solver.seed", s.seed);
  tree.put("solver.inner_iterations", s.inner_iterations);
  tree.put("solver.snapshot_stride", s.snapshot_stride);
  tree.put("solver.kernel", "gaussian");
  tree.put("solver.summation", detail::summation_name(s.summation));

  const auto& o = c.oracle;
  tree.put("oracle.points", o.points);
  tree.put("oracle.half_width", format_double(o.half_width));
  tree.put("oracle.dt", format_double(o.dt));
  tree.put("oracle.tol", format_double(o.tol));
  tree.put("oracle.max_sweeps", o.max_sweeps);
  tree.put("oracle.tau", format_double(o.tau));
  tree.put("oracle.tau_mode", o.tau_mode == TauMode::sobolev ? "sobolev" : "tv");
  tree.put("oracle.band_sd", format_double(o.band_sd));
  tree.put("oracle.regularized", c.oracle_regularized ? "true" : "false");

  tree.put("output.dir", c.output_dir);
  tree.put("output.time_stride", c.time_stride);

  tree.put("sweep.particles", detail::join(c.sweep_particles));
  tree.put("sweep.epsilons", detail::join(c.sweep_epsilons));
  tree.put("sweep.seeds", detail::join(c.sweep_seeds));

  std::ostringstream os;
  pt::write_ini(os, tree);
  return os.str();
}

/// Parses the INI text. Unknown sections or keys are rejected.
inline RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }

  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw std::invalid_argument("config key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string v = node.data();
      const std::string full = section + "." + key;
      if (section == "problem") {
        if (key == "name") c.problem = v;
        else if (key == "horizon") c.horizon = detail::parse_double(full, v);
        else throw std::invalid_argument("unknown config key '" + full + "'");
      } else if (section == "params") {
        c.params[key] = detail::parse_double(full, v);
      } else if (section == "solver") {
        auto& s = c.solver;
        if (key == "particles") s.particles = detail::parse_uint(full, v);
        else if (key == "epsilon") s.epsilon = detail::parse_double(full, v);
        else if (key == "epsilon_schedule") s.epsilon_from_schedule = detail::parse_bool(full, v);
        else if (key == "dt") s.dt = detail::parse_double(full, v);
        else if (key == "seed") s.seed = detail::parse_uint(full, v);
        else if (key == "inner_iterations") s.inner_iterations = detail::parse_uint(full, v);
        else if (key == "snapshot_stride") s.snapshot_stride = detail::parse_uint(full, v);
        else if (key == "kernel") s.kernel = parse_kernel_kind(v);
        else if (key == "summation") s.summation = parse_summation(v);
        else throw std::invalid_argument("unknown config key '" + full + "'");
      } else if (section == "oracle") {
        auto& o = c.oracle;
        if (key == "points") o.points = detail::parse_uint(full, v);
        else if (key == "half_width") o.half_width = detail::parse_double(full, v);
        else if (key == "dt") o.dt = detail::parse_double(full, v);
        else if (key == "tol") o.tol = detail::parse_double(full, v);
        else if (key == "max_sweeps") o.max_sweeps = detail::parse_uint(full, v);
        else if (key == "tau") o.tau = detail::parse_double(full, v);
        else if (key == "tau_mode") {
          if (v == "tv") o.tau_mode = TauMode::total_variation;
          else if (v == "sobolev") o.tau_mode = TauMode::sobolev;
          else throw std::invalid_argument("oracle.tau_mode must be 'tv' or 'sobolev'");
        } else if (key == "band_sd") o.band_sd = detail::parse_double(full, v);
        else if (key == "regularized") c.oracle_regularized = detail::parse_bool(full, v);
        else throw std::invalid_argument("unknown config key '" + full + "'");
      } else if (section == "output") {
        if (key == "dir") c.output_dir = v;
        else if (key == "time_stride") c.time_stride = detail::parse_uint(full, v);
        else throw std::invalid_argument("unknown config key '" + full + "'");
      } else if (section == "sweep") {
        if (key == "particles") {
          for (const auto& x : detail::split_list(v)) c.sweep_particles.push_back(detail::parse_uint(full, x));
        } else if (key == "epsilons") {
          for (const auto& x : detail::split_list(v)) c.sweep_epsilons.push_back(detail::parse_double(full, x));
        } else if (key == "seeds") {
          for (const auto& x : detail::split_list(v)) c.sweep_seeds.push_back(detail::parse_uint(full, x));
        } else {
          throw std::invalid_argument("unknown config key '" + full + "'");
        }
      } else {
        throw std::invalid_argument("unknown config section '" + section + "'");
      }
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path.string());
  out << config_to_string(c);
}

/// FNV-1a 64 of the canonical config text.
inline std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : config_to_string(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Evaluation grid for error metrics: a 1D grid, or its tensor square in d = 2.
struct ErrorGrid {
  Grid1D axis;
  std::size_t dim = 1;

  std::size_t size() const { return dim == 1 ? axis.points : axis.points * axis.points; }
  double weight(std::size_t q) const {
    if (dim == 1) return axis.weight(q);
    return axis.weight(q / axis.points) * axis.weight(q % axis.points);
  }
  /// Query coordinates stored per dimension.
  std::vector<double> queries() const {
    const std::size_t m = size();
    std::vector<double> q(m * dim);
    for (std::size_t i = 0; i < m; ++i) {
      if (dim == 1) {
        q[i] = axis.x(i);
      } else {
        q[i] = axis.x(i / axis.points);
        q[m + i] = axis.x(i % axis.points);
      }
    }
    return q;
  }
  bool operator==(const ErrorGrid&) const = default;
};

/// Trapezoid ∫|a - b| on a 1D grid.
inline double l1_error(const Grid1D& grid, std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != grid.points || reference.size() != grid.points)
    throw std::invalid_argument("l1_error: grid size mismatch");
  CompensatedSum s;
  for (std::size_t j = 0; j < grid.points; ++j) s.add(grid.weight(j) * std::abs(estimate[j] - reference[j]));
  return s.value();
}

/// ∫|a - b| for scalar fields, ∫‖a - b‖₂ for vector fields stored per
/// dimension (size = components · points).
inline double l1_error(const ErrorGrid& grid, std::span<const double> estimate, std::span<const double> reference) {
  const std::size_t m = grid.size();
  if (estimate.size() != reference.size() || estimate.size() % m != 0)
    throw std::invalid_argument("l1_error: grid size mismatch");
  const std::size_t comps = estimate.size() / m;
  CompensatedSum s;
  for (std::size_t q = 0; q < m; ++q) {
    double r2 = 0.0;
    for (std::size_t k = 0; k < comps; ++k) {
      const double d = estimate[k * m + q] - reference[k * m + q];
      r2 += d * d;
    }
    s.add(grid.weight(q) * std::sqrt(r2));
  }
  return s.value();
}

/// Reference solution on an error grid at arbitrary times.
class Reference {
public:
  Reference(const ProblemSpec& spec, const RunConfig& cfg) : spec_(spec) {
    require(spec.dim <= 2, "error grids support d <= 2");
    const double L = cfg.oracle.half_width > 0.0 ? cfg.oracle.half_width
                                                  : (spec.dim == 1 && spec.diffusion ? default_half_width(spec, spec.horizon)
                                                                                      : 8.0);
    if (spec.exact && !cfg.oracle_regularized) {
      const std::size_t pts = spec.dim == 1 ? cfg.oracle.points : std::min<std::size_t>(cfg.oracle.points, 201);
      grid_ = ErrorGrid{Grid1D(L, pts), spec.dim};
      kind_ = "exact";
    } else if (spec.dim == 1 && spec.diffusion) {
      OracleConfig oc = cfg.oracle;
      oc.half_width = L;
      if (cfg.oracle_regularized) oc.epsilon = cfg.solver.epsilon;
      oracle_ = solve(spec, oc);
      grid_ = ErrorGrid{oracle_->grid, 1};
      kind_ = cfg.oracle_regularized ? "regularized-oracle" : "oracle";
    } else {
      throw std::invalid_argument("problem '" + spec.name + "' has no reference solution");
    }
  }

  const ErrorGrid& grid() const noexcept { return grid_; }
  const std::string& kind() const noexcept { return kind_; }
  const std::optional<GridSolution>& oracle() const noexcept { return oracle_; }

  /// (u, ∇u) at time t on the grid; gradient stored per dimension.
  FieldValues at(double t) const {
    FieldValues out;
    out.dim = spec_.dim;
    const std::size_t m = grid_.size();
    out.u.resize(m);
    out.grad.resize(m * spec_.dim);
    if (oracle_) {
      const std::size_t k = oracle_->index_of(t);
      if (std::abs(oracle_->u.times[k] - t) > 1e-9)
        throw std::invalid_argument("reference time " + format_double(t) + " is not on the oracle time grid");
      const auto u = oracle_->u_at(k), g = oracle_->grad_at(k);
      std::copy(u.begin(), u.end(), out.u.begin());
      std::copy(g.begin(), g.end(), out.grad.begin());
      return out;
    }
    const auto q = grid_.queries();
    std::vector<double> x(spec_.dim), gr(spec_.dim);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < spec_.dim; ++k) x[k] = q[k * m + i];
      out.u[i] = spec_.exact->value(t, x);
      spec_.exact->gradient(t, x, gr);
      for (std::size_t k = 0; k < spec_.dim; ++k) out.grad[k * m + i] = gr[k];
    }
    return out;
  }

private:
  ProblemSpec spec_;
  ErrorGrid grid_;
  std::string kind_;
  std::optional<GridSolution> oracle_;
};

struct ErrorReport {
  std::string reference;
  std::size_t particles = 0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> times;
  std::vector<double> l1_u, l1_grad;
  std::vector<double> mass, reference_mass;
  FieldValues final_estimate, final_reference;
  ErrorGrid grid;
  std::size_t clamped_weights = 0;
  PhaseTimings timings;
  double reference_seconds = 0.0;
};

/// Errors of one solver run against a prepared reference at every snapshot.
inline ErrorReport compare_run(const SolverRun& run, const Reference& ref) {
  ErrorReport rep;
  rep.reference = ref.kind();
  rep.particles = run.config.particles;
  rep.epsilon = run.epsilon;
  rep.seed = run.config.seed;
  rep.grid = ref.grid();
  rep.clamped_weights = run.clamped_weights;
  rep.timings = run.timings;
  const auto queries = ref.grid().queries();
  const KernelFamily kernel = make_kernel(run.config.kernel, run.snapshots.front().state.dim, run.epsilon);
  for (const auto& snap : run.snapshots) {
    const FieldValues est = estimate_field(snap.state, snap.log_weights, kernel, queries, run.config.summation);
    const FieldValues exact = ref.at(snap.t());
    rep.times.push_back(snap.t());
    rep.l1_u.push_back(l1_error(ref.grid(), est.u, exact.u));
    rep.l1_grad.push_back(l1_error(ref.grid(), est.grad, exact.grad));
    rep.mass.push_back(mass(snap));
    CompensatedSum m;
    for (std::size_t q = 0; q < exact.u.size(); ++q) m.add(ref.grid().weight(q) * exact.u[q]);
    rep.reference_mass.push_back(m.value());
    rep.final_estimate = est;
    rep.final_reference = exact;
  }
  return rep;
}

/// Runs the particle solver for `cfg` and compares it to the exact solution
/// or the grid oracle.
inline ErrorReport run_compare(const RunConfig& cfg) {
  cfg.validate();
  const ProblemSpec spec = cfg.make_spec();
  const auto t0 = detail::Clock::now();
  const Reference ref(spec, cfg);
  const double ref_seconds = detail::seconds_since(t0);
  ErrorReport rep = compare_run(run(spec, cfg.solver), ref);
  rep.reference_seconds = ref_seconds;
  return rep;
}

struct SlopeFit {
  double slope = std::nan("");
  double intercept = std::nan("");
  std::size_t points = 0;
  bool dropped_smallest = false;
};

/// Least squares line through (log x, log y); nonpositive y are skipped.
inline SlopeFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "fit_loglog: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(y[i])) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  SlopeFit fit;
  fit.points = lx.size();
  if (lx.size() < 2) return fit;
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

struct SweepRow {
  std::size_t particles = 0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double t = 0.0;
  double l1_u = 0.0, l1_grad = 0.0, mass = 0.0;
  std::string status = "ok";
};

struct SweepTiming {
  std::size_t particles = 0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  PhaseTimings timings;
};

/// Seed statistics of one (N, ε) cell at t = T.
struct SweepCell {
  std::size_t particles = 0;
  double epsilon = 0.0;
  std::size_t seeds = 0;
  double mean_error = 0.0;  // mean L¹ error of u
  double mc_floor = 0.0;    // mean_s ‖u_s - ū‖₁ √(S / (S - 1))
  double bias = 0.0;        // mean_error - mc_floor
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepTiming> timings;
  std::vector<SweepCell> cells;
  SlopeFit epsilon_slope;  // bias vs ε at the largest N
  SlopeFit particle_slope;  // mean error vs N at the first ε column
  std::string reference;
};

/// Full N × ε × seed matrix. A failing cell is recorded with its message and
/// the sweep continues.
inline SweepResult sweep(const RunConfig& cfg) {
  SweepResult out;
  if (cfg.sweep_particles.empty() || cfg.sweep_seeds.empty() ||
      (cfg.sweep_epsilons.empty() && !cfg.solver.epsilon_from_schedule))
    return out;
  cfg.validate();
  const ProblemSpec spec = cfg.make_spec();
  const Reference ref(spec, cfg);
  out.reference = ref.kind();
  const std::size_t ncols = cfg.sweep_epsilons.empty() ? 1 : cfg.sweep_epsilons.size();

  for (std::size_t n : cfg.sweep_particles) {
    for (std::size_t e = 0; e < ncols; ++e) {
      SolverConfig sc = cfg.solver;
      sc.particles = n;
      if (!cfg.sweep_epsilons.empty()) {
        sc.epsilon = cfg.sweep_epsilons[e];
        sc.epsilon_from_schedule = false;
      }
      std::vector<FieldValues> finals;
      std::vector<double> errors;
      SweepCell cell;
      cell.particles = n;
      for (std::uint64_t seed : cfg.sweep_seeds) {
        sc.seed = seed;
        SweepRow base;
        base.particles = n;
        base.seed = seed;
        try {
          const SolverRun r = run(spec, sc);
          const ErrorReport rep = compare_run(r, ref);
          cell.epsilon = rep.epsilon;
          for (std::size_t k = 0; k < rep.times.size(); ++k) {
            SweepRow row = base;
            row.epsilon = rep.epsilon;
            row.t = rep.times[k];
            row.l1_u = rep.l1_u[k];
            row.l1_grad = rep.l1_grad[k];
            row.mass = rep.mass[k];
            out.rows.push_back(row);
          }
          out.timings.push_back({n, rep.epsilon, seed, rep.timings});
          finals.push_back(rep.final_estimate);
          errors.push_back(rep.l1_u.back());
        } catch (const std::exception& ex) {
          SweepRow row = base;
          row.epsilon = sc.epsilon_from_schedule ? std::nan("") : sc.epsilon;
          row.t = spec.horizon;
          row.l1_u = row.l1_grad = row.mass = std::nan("");
          row.status = std::string("error: ") + ex.what();
          out.rows.push_back(row);
        }
      }
      if (errors.empty()) continue;
      const std::size_t S = errors.size();
      cell.seeds = S;
      CompensatedSum me;
      for (double x : errors) me.add(x);
      cell.mean_error = me.value() / static_cast<double>(S);
      if (S >= 2) {
        const std::size_t m = finals.front().u.size();
        std::vector<double> mean(m, 0.0);
        for (const auto& f : finals)
          for (std::size_t q = 0; q < m; ++q) mean[q] += f.u[q] / static_cast<double>(S);
        CompensatedSum fl;
        for (const auto& f : finals) fl.add(l1_error(ref.grid(), f.u, mean));
        cell.mc_floor = fl.value() / static_cast<double>(S) * std::sqrt(static_cast<double>(S) / (S - 1.0));
      }
      cell.bias = cell.mean_error - cell.mc_floor;
      out.cells.push_back(cell);
    }
  }

  // Bias slope over ε at the largest N, smallest ε dropped if the error turns up there.
  const std::size_t n_max = *std::max_element(cfg.sweep_particles.begin(), cfg.sweep_particles.end());
  std::vector<SweepCell> col;
  for (const auto& c : out.cells)
    if (c.particles == n_max) col.push_back(c);
  std::sort(col.begin(), col.end(), [](const SweepCell& a, const SweepCell& b) { return a.epsilon < b.epsilon; });
  bool dropped = false;
  if (col.size() >= 3 && col[0].mean_error > col[1].mean_error) {
    col.erase(col.begin());
    dropped = true;
  }
  if (col.size() >= 2) {
    std::vector<double> xs, ys;
    for (const auto& c : col) {
      xs.push_back(c.epsilon);
      ys.push_back(c.bias);
    }
    out.epsilon_slope = fit_loglog(xs, ys);
    out.epsilon_slope.dropped_smallest = dropped;
  }

  std::vector<double> ns, errs;
  for (const auto& c : out.cells)
    if (cfg.sweep_epsilons.empty() || c.epsilon == cfg.sweep_epsilons.front()) {
      ns.push_back(static_cast<double>(c.particles));
      errs.push_back(c.mean_error);
    }
  if (ns.size() >= 2) out.particle_slope = fit_loglog(ns, errs);
  return out;
}

// ---- file output -----------------------------------------------------------

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

} // namespace detail

/// t, l1_u, l1_grad, mass, reference_mass
inline void write_errors_csv(const ErrorReport& rep, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "t,l1_u,l1_grad,mass,reference_mass\n";
  for (std::size_t k = 0; k < rep.times.size(); ++k)
    out << format_double(rep.times[k]) << ',' << format_double(rep.l1_u[k]) << ',' << format_double(rep.l1_grad[k])
        << ',' << format_double(rep.mass[k]) << ',' << format_double(rep.reference_mass[k]) << '\n';
}

/// Final-time fields on the error grid: x (and y), u, grad, u_ref, grad_ref.
inline void write_field_csv(const ErrorReport& rep, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  const auto q = rep.grid.queries();
  const std::size_t m = rep.grid.size(), d = rep.grid.dim;
  out << (d == 1 ? "x" : "x,y") << ",u";
  for (std::size_t k = 0; k < d; ++k) out << ",grad" << k;
  out << ",u_ref";
  for (std::size_t k = 0; k < d; ++k) out << ",grad_ref" << k;
  out << '\n';
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < d; ++k) out << format_double(q[k * m + i]) << ',';
    out << format_double(rep.final_estimate.u[i]);
    for (std::size_t k = 0; k < d; ++k) out << ',' << format_double(rep.final_estimate.grad[k * m + i]);
    out << ',' << format_double(rep.final_reference.u[i]);
    for (std::size_t k = 0; k < d; ++k) out << ',' << format_double(rep.final_reference.grad[k * m + i]);
    out << '\n';
  }
}

inline void write_timings_csv(const PhaseTimings& t, double reference_seconds, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "phase,seconds\n";
  out << "reference," << format_double(reference_seconds) << '\n';
  out << "sample," << format_double(t.sample) << '\n';
  out << "estimate," << format_double(t.estimate) << '\n';
  out << "weights," << format_double(t.weights) << '\n';
  out << "propagate," << format_double(t.propagate) << '\n';
  out << "bookkeeping," << format_double(t.bookkeeping) << '\n';
  out << "total," << format_double(t.total) << '\n';
}

/// t, x, u, grad_u for every `time_stride`-th oracle row (the last row always).
inline void write_grid_csv(const GridSolution& sol, const std::filesystem::path& path, std::size_t time_stride = 1) {
  require(time_stride >= 1, "time_stride must be positive");
  auto out = detail::open_out(path);
  out << "t,x,u,grad_u\n";
  for (std::size_t k = 0; k < sol.rows(); ++k) {
    if (k % time_stride != 0 && k + 1 != sol.rows()) continue;
    const auto u = sol.u_at(k), g = sol.grad_at(k);
    const std::string t = format_double(sol.u.times[k]);
    for (std::size_t j = 0; j < sol.grid.points; ++j)
      out << t << ',' << format_double(sol.grid.x(j)) << ',' << format_double(u[j]) << ',' << format_double(g[j]) << '\n';
  }
}

/// subinterval, start, sweeps, final_residual
inline void write_oracle_summary_csv(const GridSolution& sol, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "subinterval,start,sweeps,final_residual\n";
  for (std::size_t s = 0; s < sol.sweeps.size(); ++s)
    out << s << ',' << format_double(sol.subinterval_starts[s]) << ',' << sol.sweeps[s] << ','
        << format_double(sol.residuals[s].empty() ? 0.0 : sol.residuals[s].back()) << '\n';
}

inline void write_sweep_csv(const SweepResult& res, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "particles,epsilon,seed,t,l1_u,l1_grad,mass,status\n";
  for (const auto& r : res.rows)
    out << r.particles << ',' << format_double(r.epsilon) << ',' << r.seed << ',' << format_double(r.t) << ','
        << format_double(r.l1_u) << ',' << format_double(r.l1_grad) << ',' << format_double(r.mass) << ','
        << detail::csv_quote(r.status) << '\n';
}

inline void write_sweep_cells_csv(const SweepResult& res, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "particles,epsilon,seeds,mean_error,mc_floor,bias\n";
  for (const auto& c : res.cells)
    out << c.particles << ',' << format_double(c.epsilon) << ',' << c.seeds << ',' << format_double(c.mean_error) << ','
        << format_double(c.mc_floor) << ',' << format_double(c.bias) << '\n';
  out << "\nfit,slope,intercept,points,dropped_smallest\n";
  auto fit = [&](const char* name, const SlopeFit& f) {
    out << name << ',' << format_double(f.slope) << ',' << format_double(f.intercept) << ',' << f.points << ','
        << (f.dropped_smallest ? "true" : "false") << '\n';
  };
  fit("epsilon", res.epsilon_slope);
  fit("particles", res.particle_slope);
}

inline void write_sweep_timings_csv(const SweepResult& res, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "particles,epsilon,seed,sample,estimate,weights,propagate,bookkeeping,total\n";
  for (const auto& r : res.timings) {
    const auto& t = r.timings;
    out << r.particles << ',' << format_double(r.epsilon) << ',' << r.seed << ',' << format_double(t.sample) << ','
        << format_double(t.estimate) << ',' << format_double(t.weights) << ',' << format_double(t.propagate) << ','
        << format_double(t.bookkeeping) << ',' << format_double(t.total) << '\n';
  }
}

inline nlohmann::json run_manifest(const RunConfig& cfg, const std::string& command) {
  char host[256] = "unknown";
  gethostname(host, sizeof host - 1);
  utsname uts{};
  uname(&uts);
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return {
      {"command", command},
      {"config_hash", hash},
      {"config", config_to_string(cfg)},
      {"seed", cfg.solver.seed},
      {"version", FKP_VERSION},
      {"host", {{"name", host}, {"system", uts.sysname}, {"release", uts.release}, {"machine", uts.machine}}},
      {"compiler", __VERSION__},
      {"threads", thread_count()},
  };
}

inline void write_manifest(const nlohmann::json& manifest, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << manifest.dump(2) << '\n';
}

} // namespace fkp
