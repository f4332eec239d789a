#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace ckd::par {

// Number of worker threads the kernels may use. Honors the CKD_THREADS
// environment variable (values < 1 are treated as 1); without OpenMP this
// is always 1.
int max_threads();

// Re-reads CKD_THREADS. Exists so tests can change the cap mid-process.
void refresh_thread_cap();

// Fixed work-chunk size for the data-parallel kernels. Partial results are
// produced per chunk and reduced in chunk order, so sums do not depend on
// the thread count and repeated runs agree bit for bit.
inline constexpr std::size_t kChunk = 8;

std::size_t chunk_count(std::size_t n_items, std::size_t chunk = kChunk);

// Runs body(chunk_index, begin, end) over [0, n_items) in chunks. Bodies for
// different chunks may run concurrently; each body writes only to its own
// chunk slot. With force_serial the chunks run one after another on the
// calling thread, the reference path the parallel kernels are tested
// against.
void for_chunks(std::size_t n_items,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& body,
                bool force_serial = false, std::size_t chunk = kChunk);

// Chunked map-reduce with an ordered reduction. make_result() builds an
// accumulator per chunk, map fills it, and reduce folds the chunk results
// in index order into a single value.
template <class R, class Map, class Reduce>
R map_reduce_ordered(std::size_t n_items, R init, Map map, Reduce reduce,
                     bool force_serial = false, std::size_t chunk = kChunk) {
  std::size_t nc = chunk_count(n_items, chunk);
  std::vector<R> parts(nc, init);
  for_chunks(
      n_items,
      [&](std::size_t ci, std::size_t b, std::size_t e) { map(parts[ci], b, e); },
      force_serial, chunk);
  R out = init;
  for (std::size_t ci = 0; ci < nc; ++ci) reduce(out, parts[ci]);
  return out;
}

}  // namespace ckd::par
