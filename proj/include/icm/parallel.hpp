#pragma once

#include <cstdint>
#include <exception>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace icm::par {

// Global worker count. 0 = runtime default, 1 = forced serial.
void set_thread_count(int n);
int thread_count();
int effective_threads(std::int64_t n);

// Parallel loop over [0, n). Every call site writes disjoint output slots and
// keeps per-slot reductions in fixed serial order, so results are bitwise
// identical for any thread count (including the serial fallback).
template <class F>
void for_index(std::int64_t n, F&& fn) {
#ifdef _OPENMP
    const int nt = effective_threads(n);
    if (nt > 1) {
        std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(nt)
        for (std::int64_t i = 0; i < n; ++i) {
            if (err) continue;
            try {
                fn(i);
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace icm::par
