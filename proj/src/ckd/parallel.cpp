#include "ckd/parallel.hpp"

#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ckd::par {

namespace {

int read_cap() {
  int hw = 1;
#ifdef _OPENMP
  hw = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("CKD_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
    return 1;
  }
  return hw;
}

std::atomic<int> g_cap{-1};

}  // namespace

int max_threads() {
  int c = g_cap.load(std::memory_order_relaxed);
  if (c < 0) {
    c = read_cap();
    g_cap.store(c, std::memory_order_relaxed);
  }
  return c;
}

void refresh_thread_cap() { g_cap.store(read_cap(), std::memory_order_relaxed); }

std::size_t chunk_count(std::size_t n_items, std::size_t chunk) {
  return (n_items + chunk - 1) / chunk;
}

void for_chunks(std::size_t n_items,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& body,
                bool force_serial, std::size_t chunk) {
  if (n_items == 0) return;
  const std::size_t nc = chunk_count(n_items, chunk);
  const int threads = force_serial ? 1 : max_threads();
  if (threads <= 1 || nc == 1) {
    for (std::size_t ci = 0; ci < nc; ++ci) {
      std::size_t b = ci * chunk;
      std::size_t e = b + chunk < n_items ? b + chunk : n_items;
      body(ci, b, e);
    }
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long long ci = 0; ci < static_cast<long long>(nc); ++ci) {
    std::size_t b = static_cast<std::size_t>(ci) * chunk;
    std::size_t e = b + chunk < n_items ? b + chunk : n_items;
    body(static_cast<std::size_t>(ci), b, e);
  }
#else
  for (std::size_t ci = 0; ci < nc; ++ci) {
    std::size_t b = ci * chunk;
    std::size_t e = b + chunk < n_items ? b + chunk : n_items;
    body(ci, b, e);
  }
#endif
}

}  // namespace ckd::par
