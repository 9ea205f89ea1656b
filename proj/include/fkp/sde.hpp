#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fkp/model.hpp"
#include "fkp/numeric.hpp"
#include "fkp/parallel.hpp"
#include "fkp/rng.hpp"

namespace fkp {

/// N particles in R^d at time t. Coordinates are stored per dimension:
/// coordinate k of particle i is `coords[k * n + i]`.
struct EnsembleState {
  double t = 0.0;
  std::size_t step_index = 0;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> coords;
  /// RNG stream id of each particle; empty means particle i uses stream i.
  std::vector<std::uint64_t> stream_ids;

  EnsembleState() = default;
  EnsembleState(std::size_t particles, std::size_t d, double time = 0.0)
      : t(time), n(particles), dim(d), coords(particles * d, 0.0) {}

  double& at(std::size_t i, std::size_t k) { return coords[k * n + i]; }
  double at(std::size_t i, std::size_t k) const { return coords[k * n + i]; }
  std::span<const double> coordinate(std::size_t k) const { return {coords.data() + k * n, n}; }
  std::span<double> coordinate(std::size_t k) { return {coords.data() + k * n, n}; }
  std::uint64_t stream_id(std::size_t i) const { return stream_ids.empty() ? i : stream_ids[i]; }
};

/// Draws n i.i.d. particles from u0. Particle i uses the initial-sampling
/// stream with index stream_id(i).
inline EnsembleState sample_initial(const ProblemSpec& spec, std::size_t n, const RngPolicy& rng) {
  require(n >= 1, "sample_initial needs n >= 1");
  if (!spec.init_density.has_sampler()) throw std::invalid_argument("initial density has no sampler");
  const std::size_t d = spec.dim;
  EnsembleState state(n, d);
  parallel_for_with(
      n, [d] { return std::vector<double>(d); },
      [&](std::size_t i, std::vector<double>& x) {
        spec.init_density.sample(rng, i, x);
        for (std::size_t k = 0; k < d; ++k) state.at(i, k) = x[k];
      });
  if (!all_finite(state.coords)) throw NumericalError("initial sample is not finite");
  return state;
}

/// One Euler-Maruyama step ξ += Φ(t, ξ)√dt Z + g(t, ξ) dt, Z ~ N(0, I_p) drawn
/// from the diffusion stream (seed, stream_id(i), step_index).
inline EnsembleState euler_step(const EnsembleState& state, const ProblemSpec& spec, double dt,
                                const RngPolicy& rng) {
  require(dt > 0.0 && std::isfinite(dt), "euler_step needs dt > 0");
  require(state.t + dt <= spec.horizon + 1e-12, "euler_step would step past the horizon");
  require(state.dim == spec.dim, "ensemble dimension does not match the problem");
  const std::size_t d = spec.dim, p = spec.brownian_dim, n = state.n;
  const double sqdt = std::sqrt(dt);

  EnsembleState next(n, d, state.t + dt);
  next.step_index = state.step_index + 1;
  next.stream_ids = state.stream_ids;

  struct Scratch {
    std::vector<double> x, z, phi, drift;
  };
  parallel_for_with(
      n, [&] { return Scratch{std::vector<double>(d), std::vector<double>(p), std::vector<double>(d * p),
                              std::vector<double>(d)}; },
      [&](std::size_t i, Scratch& s) {
        for (std::size_t k = 0; k < d; ++k) s.x[k] = state.at(i, k);
        rng.normals(StreamDomain::diffusion, state.stream_id(i), state.step_index, s.z);
        spec.phi(state.t, s.x, s.phi);
        spec.g(state.t, s.x, s.drift);
        for (std::size_t k = 0; k < d; ++k) {
          double noise = 0.0;
          for (std::size_t j = 0; j < p; ++j) noise += s.phi[k * p + j] * s.z[j];
          next.at(i, k) = s.x[k] + noise * sqdt + s.drift[k] * dt;
        }
      });
  if (!all_finite(next.coords)) throw NumericalError("euler_step produced a non-finite position");
  return next;
}

/// Trajectory of n_steps Euler steps of size T / n_steps, including the
/// initial state.
inline std::vector<EnsembleState> propagate(const ProblemSpec& spec, std::size_t n, std::size_t n_steps,
                                            const RngPolicy& rng) {
  std::vector<EnsembleState> path;
  path.reserve(n_steps + 1);
  path.push_back(sample_initial(spec, n, rng));
  if (n_steps == 0) return path;
  const double dt = spec.horizon / static_cast<double>(n_steps);
  for (std::size_t k = 0; k < n_steps; ++k) path.push_back(euler_step(path.back(), spec, dt, rng));
  return path;
}

} // namespace fkp
