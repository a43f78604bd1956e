#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace mml {

// Runs fn(i) for i in [0, n). Work items must write only to their own output
// slots; callers then reduce in index order, which keeps every result
// bit-identical regardless of thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (threads <= 0) threads = hw > 0 ? hw : 1;
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mml
