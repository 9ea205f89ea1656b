#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "fkp/kernel.hpp"
#include "fkp/numeric.hpp"
#include "fkp/parallel.hpp"
#include "fkp/sde.hpp"

namespace fkp {

/// How K_ε ∗ γ is summed.
///   naive          all pairs, terms beyond the cutoff skipped
///   cell_list      cells of side r_c ε, only neighbouring cells visited
///   box_expansion  d = 1 only: per-box Hermite expansion of the Gaussian,
///                  O(N + M) instead of O(N · local count)
///   automatic      box_expansion for d = 1, cell_list otherwise
enum class Summation { automatic, naive, cell_list, box_expansion };

inline Summation parse_summation(std::string_view name) {
  if (name == "auto" || name == "automatic") return Summation::automatic;
  if (name == "naive") return Summation::naive;
  if (name == "cell_list" || name == "cell-list") return Summation::cell_list;
  if (name == "box_expansion" || name == "box-expansion") return Summation::box_expansion;
  throw std::invalid_argument("unknown summation backend '" + std::string(name) + "'");
}

/// u and ∇u at M query points. `grad[k * m + q]` is component k at query q.
struct FieldValues {
  std::size_t dim = 1;
  std::vector<double> u;
  std::vector<double> grad;

  std::size_t size() const noexcept { return u.size(); }
  double gradient(std::size_t q, std::size_t k) const { return grad[k * u.size() + q]; }
};

namespace detail {

/// Stable sort of indices by integer key. Counting sort when the key range is
/// small, otherwise a stable comparison sort.
inline std::vector<std::size_t> stable_order_by_key(std::span<const std::int64_t> keys) {
  const std::size_t n = keys.size();
  std::vector<std::size_t> order(n);
  if (n == 0) return order;
  const auto [lo_it, hi_it] = std::minmax_element(keys.begin(), keys.end());
  const std::int64_t lo = *lo_it, hi = *hi_it;
  const auto range = static_cast<std::uint64_t>(hi - lo);
  if (range <= 16 * static_cast<std::uint64_t>(n) + 4096) {
    std::vector<std::size_t> start(range + 2, 0);
    for (std::int64_t key : keys) ++start[static_cast<std::size_t>(key - lo) + 1];
    std::partial_sum(start.begin(), start.end(), start.begin());
    for (std::size_t i = 0; i < n; ++i) order[start[static_cast<std::size_t>(keys[i] - lo)]++] = i;
  } else {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  }
  return order;
}

struct CellRange {
  std::int64_t key;
  std::size_t begin, end;
};

inline std::vector<CellRange> group_sorted(std::span<const std::int64_t> sorted_keys) {
  std::vector<CellRange> cells;
  for (std::size_t i = 0; i < sorted_keys.size();) {
    std::size_t j = i;
    while (j < sorted_keys.size() && sorted_keys[j] == sorted_keys[i]) ++j;
    cells.push_back({sorted_keys[i], i, j});
    i = j;
  }
  return cells;
}

inline const CellRange* find_cell(const std::vector<CellRange>& cells, std::int64_t key) {
  const auto it = std::lower_bound(cells.begin(), cells.end(), key,
                                   [](const CellRange& c, std::int64_t k) { return c.key < k; });
  return (it != cells.end() && it->key == key) ? &*it : nullptr;
}

inline constexpr std::size_t hermite_terms = 20;

} // namespace detail

/// Uniform cell grid of side `cell_size` over the particle bounding box.
struct CellGrid {
  std::vector<double> origin;
  std::vector<std::int64_t> extent;  // cells per dimension
  double cell_size = 1.0;

  CellGrid() = default;
  CellGrid(const EnsembleState& ens, double size) : origin(ens.dim), extent(ens.dim), cell_size(size) {
    require(size > 0.0 && std::isfinite(size), "cell size must be positive and finite");
    for (std::size_t k = 0; k < ens.dim; ++k) {
      const auto c = ens.coordinate(k);
      const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
      origin[k] = *lo;
      extent[k] = static_cast<std::int64_t>(std::floor((*hi - *lo) / size)) + 1;
    }
    double total = 1.0;
    for (auto e : extent) total *= static_cast<double>(e);
    if (total > 9.0e15) throw std::invalid_argument("cell grid too large for the particle spread");
  }

  std::int64_t cell(double x, std::size_t k) const {
    return static_cast<std::int64_t>(std::floor((x - origin[k]) / cell_size));
  }
  /// Row-major key, dimension 0 most significant.
  std::int64_t key(std::span<const std::int64_t> c) const {
    std::int64_t key = 0;
    for (std::size_t k = 0; k < c.size(); ++k) key = key * extent[k] + c[k];
    return key;
  }
};

/// Order in which the cell-list backend stores particles: increasing cell
/// key, ties by particle index.
inline std::vector<std::size_t> cell_list_order(const EnsembleState& ens, double cell_size) {
  if (ens.n == 0) return {};
  const CellGrid grid(ens, cell_size);
  std::vector<std::int64_t> keys(ens.n), c(ens.dim);
  for (std::size_t i = 0; i < ens.n; ++i) {
    for (std::size_t k = 0; k < ens.dim; ++k) c[k] = grid.cell(ens.at(i, k), k);
    keys[i] = grid.key(c);
  }
  return detail::stable_order_by_key(keys);
}

/// K_ε ∗ γ and ∇K_ε ∗ γ for γ = (1/N) Σ e^{w_i} δ_{ξ_i}, frozen at one
/// snapshot. Evaluation is pure and its result does not depend on the
/// thread count.
class FieldEstimate {
public:
  FieldEstimate(const EnsembleState& ens, std::span<const double> log_weights, const KernelFamily& kernel,
                Summation backend = Summation::automatic)
      : kernel_(kernel), dim_(ens.dim), n_(ens.n) {
    require(log_weights.size() == ens.n, "log_weights size does not match the ensemble");
    require(kernel.dim == ens.dim, "kernel dimension does not match the ensemble");
    require(kernel.epsilon > 0.0, "kernel bandwidth must be positive");
    require(all_finite(log_weights), "log_weights must be finite");
    const bool finite_cutoff = std::isfinite(kernel.cutoff());
    if (backend == Summation::automatic)
      backend = !finite_cutoff ? Summation::naive : (dim_ == 1 ? Summation::box_expansion : Summation::cell_list);
    if (backend == Summation::box_expansion) require(dim_ == 1, "box_expansion summation is one-dimensional");
    if (backend != Summation::naive) require(finite_cutoff, "accelerated summation needs a finite cutoff");
    backend_ = backend;

    std::vector<double> weights(n_);
    CompensatedSum mass;
    for (std::size_t i = 0; i < n_; ++i) {
      weights[i] = std::exp(log_weights[i]);
      mass.add(weights[i]);
    }
    if (!all_finite(weights)) throw NumericalError("particle weight overflow");
    mass_ = n_ == 0 ? 0.0 : mass.value() / static_cast<double>(n_);

    switch (backend_) {
    case Summation::naive:
      coords_ = ens.coords;
      weights_ = std::move(weights);
      break;
    case Summation::cell_list:
      build_cells(ens, weights);
      break;
    default:
      build_boxes(ens, weights);
      break;
    }
  }

  Summation backend() const noexcept { return backend_; }
  const KernelFamily& kernel() const noexcept { return kernel_; }
  std::size_t particles() const noexcept { return n_; }
  /// (1/N) Σ e^{w_i}: the total mass of γ.
  double mass() const noexcept { return mass_; }

  /// Queries are stored per dimension: coordinate k of query q is
  /// `queries[k * m + q]` with m = queries.size() / d.
  FieldValues evaluate(std::span<const double> queries) const {
    require(queries.size() % dim_ == 0, "query array size is not a multiple of the dimension");
    const std::size_t m = queries.size() / dim_;
    FieldValues out;
    out.dim = dim_;
    out.u.assign(m, 0.0);
    out.grad.assign(m * dim_, 0.0);
    if (m == 0 || n_ == 0) return out;

    if (backend_ == Summation::box_expansion) {
      parallel_for(m, [&](std::size_t q) { eval_box(queries[q], out.u[q], out.grad[q]); });
    } else {
      parallel_for_with(
          m, [&] { return Scratch(dim_); },
          [&](std::size_t q, Scratch& s) {
            for (std::size_t k = 0; k < dim_; ++k) s.x[k] = queries[k * m + q];
            if (backend_ == Summation::naive) eval_naive(s);
            else eval_cells(s);
            const double scale = kernel_.scaled_norm() / static_cast<double>(n_);
            const double inv_eps2 = 1.0 / (kernel_.epsilon * kernel_.epsilon);
            out.u[q] = scale * s.sums[0].value();
            for (std::size_t k = 0; k < dim_; ++k) out.grad[k * m + q] = -scale * inv_eps2 * s.sums[k + 1].value();
          });
    }
    return out;
  }

private:
  struct Scratch {
    explicit Scratch(std::size_t d) : x(d), diff(d), cell(d), lo(d), hi(d), sums(d + 1) {}
    std::vector<double> x, diff;
    std::vector<std::int64_t> cell, lo, hi;
    std::vector<CompensatedSum> sums;  // Σ W e, then Σ W e (x - ξ)_k
  };

  // Adds particle j of the stored arrays to the running sums if it lies
  // within the cutoff.
  void accumulate(Scratch& s, std::size_t j) const {
    const double rc = kernel_.cutoff();
    double r2 = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      s.diff[k] = s.x[k] - coords_[k * n_ + j];
      r2 += s.diff[k] * s.diff[k];
    }
    if (r2 > rc * rc) return;
    const double e = weights_[j] * std::exp(-0.5 * r2 / (kernel_.epsilon * kernel_.epsilon));
    s.sums[0].add(e);
    for (std::size_t k = 0; k < dim_; ++k) s.sums[k + 1].add(e * s.diff[k]);
  }

  void eval_naive(Scratch& s) const {
    s.sums.assign(dim_ + 1, CompensatedSum{});
    for (std::size_t j = 0; j < n_; ++j) accumulate(s, j);
  }

  void build_cells(const EnsembleState& ens, const std::vector<double>& weights) {
    grid_ = CellGrid(ens, kernel_.cutoff());
    std::vector<std::int64_t> keys(n_), c(dim_);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = 0; k < dim_; ++k) c[k] = grid_.cell(ens.at(i, k), k);
      keys[i] = grid_.key(c);
    }
    const auto order = detail::stable_order_by_key(keys);
    coords_.resize(n_ * dim_);
    weights_.resize(n_);
    std::vector<std::int64_t> sorted_keys(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      const std::size_t i = order[j];
      for (std::size_t k = 0; k < dim_; ++k) coords_[k * n_ + j] = ens.at(i, k);
      weights_[j] = weights[i];
      sorted_keys[j] = keys[i];
    }
    cells_ = detail::group_sorted(sorted_keys);
  }

  void eval_cells(Scratch& s) const {
    s.sums.assign(dim_ + 1, CompensatedSum{});
    for (std::size_t k = 0; k < dim_; ++k) {
      const double rel = std::floor((s.x[k] - grid_.origin[k]) / grid_.cell_size);
      // Queries far outside the particle cloud see no cells at all.
      if (rel < -1.0 || rel > static_cast<double>(grid_.extent[k])) return;
      const auto ck = static_cast<std::int64_t>(rel);
      s.lo[k] = std::max<std::int64_t>(ck - 1, 0);
      s.hi[k] = std::min<std::int64_t>(ck + 1, grid_.extent[k] - 1);
      if (s.lo[k] > s.hi[k]) return;
    }
    // Odometer over the stencil, last dimension fastest: increasing keys.
    s.cell = s.lo;
    while (true) {
      if (const auto* cell = detail::find_cell(cells_, grid_.key(s.cell)))
        for (std::size_t j = cell->begin; j < cell->end; ++j) accumulate(s, j);
      std::size_t k = dim_;
      while (k > 0) {
        --k;
        if (s.cell[k] < s.hi[k]) {
          ++s.cell[k];
          break;
        }
        s.cell[k] = s.lo[k];
        if (k == 0) return;
      }
    }
  }

  void build_boxes(const EnsembleState& ens, const std::vector<double>& weights) {
    const double eps = kernel_.epsilon;
    const auto x = ens.coordinate(0);
    std::vector<std::int64_t> keys(n_);
    for (std::size_t i = 0; i < n_; ++i) keys[i] = static_cast<std::int64_t>(std::floor(x[i] / eps + 0.5));
    const auto order = detail::stable_order_by_key(keys);
    std::vector<std::int64_t> sorted_keys(n_);
    for (std::size_t j = 0; j < n_; ++j) sorted_keys[j] = keys[order[j]];
    cells_ = detail::group_sorted(sorted_keys);
    constexpr std::size_t p = detail::hermite_terms;
    moments_.assign(cells_.size() * p, 0.0);
    parallel_for(cells_.size(), [&](std::size_t b) {
      const auto& cell = cells_[b];
      const double center = static_cast<double>(cell.key) * eps;
      std::array<double, p> acc{};
      for (std::size_t j = cell.begin; j < cell.end; ++j) {
        const std::size_t i = order[j];
        const double s = (x[i] - center) / eps;
        double term = weights[i];
        for (std::size_t n = 0; n < p; ++n) {
          acc[n] += term;
          term *= s / static_cast<double>(n + 1);
        }
      }
      std::copy(acc.begin(), acc.end(), moments_.begin() + static_cast<std::ptrdiff_t>(b * p));
    });
  }

  // e^{-(t-s)²/2} = e^{-t²/2} Σ_n He_n(t) s^n / n!, so a box with moments
  // B_n = Σ W s^n / n! contributes e^{-t²/2} Σ B_n He_n(t) to the value and
  // -(1/ε) e^{-t²/2} Σ B_n He_{n+1}(t) to the gradient.
  void eval_box(double xq, double& u, double& grad) const {
    constexpr std::size_t p = detail::hermite_terms;
    const double eps = kernel_.epsilon;
    const double reach = kernel_.truncation_radius + 0.5;
    const double rel = xq / eps;
    const auto lo = static_cast<std::int64_t>(std::ceil(rel - reach));
    const auto hi = static_cast<std::int64_t>(std::floor(rel + reach));
    auto it = std::lower_bound(cells_.begin(), cells_.end(), lo,
                               [](const detail::CellRange& c, std::int64_t k) { return c.key < k; });
    CompensatedSum su, sg;
    for (; it != cells_.end() && it->key <= hi; ++it) {
      const double t = (xq - static_cast<double>(it->key) * eps) / eps;
      const double* b = moments_.data() + static_cast<std::size_t>(it - cells_.begin()) * p;
      double h_prev = 1.0, h = t;  // He_0, He_1
      double val = b[0], der = b[0] * t;
      for (std::size_t n = 1; n < p; ++n) {
        const double h_next = t * h - static_cast<double>(n) * h_prev;  // He_{n+1}
        val += b[n] * h;
        der += b[n] * h_next;
        h_prev = h;
        h = h_next;
      }
      const double g = std::exp(-0.5 * t * t);
      su.add(g * val);
      sg.add(g * der);
    }
    const double scale = kernel_.scaled_norm() / static_cast<double>(n_);
    u = scale * su.value();
    grad = -scale / eps * sg.value();
  }

  KernelFamily kernel_;
  std::size_t dim_;
  std::size_t n_;
  Summation backend_ = Summation::naive;
  double mass_ = 0.0;
  std::vector<double> coords_;   // naive and cell_list
  std::vector<double> weights_;  // naive and cell_list
  CellGrid grid_;
  std::vector<detail::CellRange> cells_;
  std::vector<double> moments_;  // box_expansion
};

inline FieldValues estimate_field(const EnsembleState& ens, std::span<const double> log_weights,
                                  const KernelFamily& kernel, std::span<const double> queries,
                                  Summation backend = Summation::automatic) {
  return FieldEstimate(ens, log_weights, kernel, backend).evaluate(queries);
}

/// The field at every particle, self-interaction included.
inline FieldValues estimate_at_particles(const EnsembleState& ens, std::span<const double> log_weights,
                                         const KernelFamily& kernel, Summation backend = Summation::automatic) {
  return FieldEstimate(ens, log_weights, kernel, backend).evaluate(ens.coords);
}

} // namespace fkp
