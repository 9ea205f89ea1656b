#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>

#include <omp.h>

namespace fkp {

/// Sets the worker count for every parallel loop in the library; 0 keeps the
/// OpenMP default. Results never depend on this value.
inline void set_thread_count(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

inline int thread_count() { return omp_get_max_threads(); }

/// Static-schedule loop over [0, n). Each iteration must write only its own
/// outputs. If iterations throw, the exception of the lowest index is
/// rethrown after the loop, so failures are thread-count independent too.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::exception_ptr error;
  std::size_t error_index = std::numeric_limits<std::size_t>::max();
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(fkp_parallel_for_error)
      {
        if (static_cast<std::size_t>(i) < error_index) {
          error_index = static_cast<std::size_t>(i);
          error = std::current_exception();
        }
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

/// As `parallel_for` but hands each worker a private scratch object built by
/// `make()`, for per-particle buffers that should not be reallocated.
template <class Make, class Fn>
void parallel_for_with(std::size_t n, Make&& make, Fn&& fn) {
  std::exception_ptr error;
  std::size_t error_index = std::numeric_limits<std::size_t>::max();
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel
  {
    auto scratch = make();
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i), scratch);
      } catch (...) {
#pragma omp critical(fkp_parallel_for_error)
        {
          if (static_cast<std::size_t>(i) < error_index) {
            error_index = static_cast<std::size_t>(i);
            error = std::current_exception();
          }
        }
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

} // namespace fkp
