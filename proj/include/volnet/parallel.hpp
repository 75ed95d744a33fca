#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace volnet {

// Kernel-level threading knobs. Parallel loops below partition *outputs*,
// so results are bitwise identical for any thread count. fast_reductions
// additionally allows chunked partial sums in reduction kernels, whose
// rounding depends on the chunk count (= thread count) and is therefore
// only reproducible for a fixed VOLNET_THREADS.
struct KernelSettings {
  int threads = 0;  // 0 = resolve from env / hardware
  bool fast_reductions = false;
  bool check_finite = false;  // assert per-op that outputs stay finite
};

inline KernelSettings& kernel_settings() {
  static KernelSettings s;
  return s;
}

inline int max_threads() {
  int t = kernel_settings().threads;
  if (t > 0) return t;
  if (const char* env = std::getenv("VOLNET_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static block partition of [0, n). Each index is processed by exactly one
// thread; fn must only write state owned by its index.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int threads = std::min<std::int64_t>(max_threads(), n);
  if (threads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::int64_t lo = t * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace volnet
