#pragma once

#include <thread>
#include <vector>

namespace voxreg {

/// Global cap on kernel worker threads (CLI --threads / VOXREG_THREADS).
inline int& thread_count() {
  static int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

/// Splits [0, n) into contiguous chunks, one per worker. Each index is
/// processed by exactly one thread with a fixed inner order, so results do
/// not depend on the thread count.
template <class Fn>
void parallel_for(int64_t n, Fn&& fn) {
  const int workers = std::min<int64_t>(thread_count(), n);
  if (workers <= 1) {
    fn(int64_t(0), n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  const int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace voxreg
