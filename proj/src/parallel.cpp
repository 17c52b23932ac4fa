#include "icm/parallel.hpp"

#include <atomic>

namespace icm::par {

namespace {
std::atomic<int> g_threads{0};
}

void set_thread_count(int n) { g_threads.store(n < 0 ? 0 : n); }

int thread_count() { return g_threads.load(); }

int effective_threads(std::int64_t n) {
#ifdef _OPENMP
    int nt = g_threads.load();
    if (nt == 0) nt = omp_get_max_threads();
    if (n < nt) nt = static_cast<int>(n < 1 ? 1 : n);
    return nt;
#else
    (void)n;
    return 1;
#endif
}

}  // namespace icm::par
