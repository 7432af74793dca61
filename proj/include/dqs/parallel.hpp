#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace dqs {

// Worker cap for data-parallel sections. DQS_THREADS overrides the
// hardware default.
inline int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("DQS_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
  }();
  return cached;
}

// Runs fn(chunk) for chunk in [0, n_chunks). Chunk boundaries are chosen
// by the caller, never by the thread count, so numerical results are
// identical for any DQS_THREADS value; callers combine per-chunk partial
// results in chunk order.
inline void parallel_for_chunks(int n_chunks, const std::function<void(int)>& fn) {
  int workers = std::min(max_threads(), n_chunks);
  if (workers <= 1 || n_chunks <= 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  auto drain = [&] {
    for (;;) {
      int c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= n_chunks) return;
      fn(c);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
}

}  // namespace dqs
