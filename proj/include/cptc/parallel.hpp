#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace cptc::detail {

/// Resolve a worker count: explicit request > CPTC_THREADS env var > 1.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CPTC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

/// Run fn(worker, begin, end) over [0, n) split into contiguous chunks,
/// one per worker. Serial when a single worker suffices.
template <class F>
void parallel_chunks(std::int64_t n, int threads, F&& fn) {
  const int want = resolve_threads(threads);
  const std::int64_t min_chunk = 1024;
  const int workers = static_cast<int>(
      std::max<std::int64_t>(1, std::min<std::int64_t>(want, (n + min_chunk - 1) / min_chunk)));
  if (workers == 1) {
    fn(0, std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t step = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t b = std::min<std::int64_t>(n, w * step);
    const std::int64_t e = std::min<std::int64_t>(n, b + step);
    pool.emplace_back([&fn, w, b, e] { fn(w, b, e); });
  }
  for (auto& t : pool) t.join();
}

/// Number of chunk workers parallel_chunks would use (for buffer allocation).
inline int chunk_workers(std::int64_t n, int threads) {
  const int want = resolve_threads(threads);
  const std::int64_t min_chunk = 1024;
  return static_cast<int>(
      std::max<std::int64_t>(1, std::min<std::int64_t>(want, (n + min_chunk - 1) / min_chunk)));
}

}  // namespace cptc::detail
