#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace abc3 {

// Execution mode for the data-parallel kernels. Serial runs the same
// per-item computation in a plain loop and is kept as the reference path;
// results are bit-identical between the two modes.
enum class Exec { Serial, Parallel };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// Applies fn(i) for i in [0, n). Items must be independent. In parallel mode
// an exception from the lowest failing index is rethrown after the loop, so
// both modes report the same error.
template <typename Fn>
void for_each_index(std::ptrdiff_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::Parallel) {
    std::exception_ptr error;
    std::ptrdiff_t error_at = n;
    std::mutex guard;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        if (i < error_at) {
          error_at = i;
          error = std::current_exception();
        }
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace abc3
