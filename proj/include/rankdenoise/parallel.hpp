#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace rankdenoise {

// Thread cap: RANK_DENOISE_THREADS wins, otherwise hardware concurrency.
inline unsigned thread_budget() {
  static const unsigned budget = [] {
    if (const char* env = std::getenv("RANK_DENOISE_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1u;
  }();
  return budget;
}

// Runs body(i) for i in [0, n). Workers own contiguous disjoint ranges, so
// results written to per-index slots are identical to the serial order.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_per_thread = 64) {
  const std::size_t want = n / std::max<std::size_t>(1, min_per_thread);
  const std::size_t workers = std::min<std::size_t>(thread_budget(), std::max<std::size_t>(1, want));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace rankdenoise
