#pragma once

#include <cstdint>

namespace handfold {

// Number of threads used by the dense kernels. Defaults to the hardware
// count (capped at 8), overridable via HANDFOLD_THREADS or set_num_threads.
// All parallel reductions combine per-thread partials in a fixed order, so
// results are reproducible run-to-run for a given thread count.
int num_threads();
void set_num_threads(int n);

// Static row partition: chunk t covers [row_begin(t), row_end(t)).
inline std::int64_t chunk_begin(std::int64_t n, int t, int nt) { return n * t / nt; }
inline std::int64_t chunk_end(std::int64_t n, int t, int nt) { return n * (t + 1) / nt; }

template <typename Fn>
void parallel_chunks(std::int64_t n, Fn&& fn) {
  int nt = num_threads();
  if (n < 4096 || nt <= 1) {
    fn(0, n, 0);
    return;
  }
#ifdef HANDFOLD_HAS_OPENMP
#pragma omp parallel num_threads(nt)
  {
#pragma omp for schedule(static)
    for (int t = 0; t < nt; ++t) fn(chunk_begin(n, t, nt), chunk_end(n, t, nt), t);
  }
#else
  fn(0, n, 0);
#endif
}

}  // namespace handfold
