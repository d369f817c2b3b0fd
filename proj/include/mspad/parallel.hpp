#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mspad {

/// Caps the OpenMP worker count for subsequent parallel regions; n <= 0
/// restores the runtime default.
void set_thread_limit(int n);

/// Current cap (the runtime default when never set).
int thread_limit();

/**
 * Runs fn(i) for i in [0, n) across OpenMP threads.
 *
 * Exceptions cannot cross an OpenMP region boundary, so each one is stored
 * per index and the one with the lowest index is rethrown after the loop.
 * That keeps the reported failure independent of scheduling.
 */
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, bool allow_parallel = true) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic) if (allow_parallel && n > 1)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mspad
