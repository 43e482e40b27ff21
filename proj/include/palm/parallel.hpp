#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace palm {

// PALMW_THREADS caps worker threads; defaults to the hardware count.
inline int worker_threads() {
  if (const char* env = std::getenv("PALMW_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Static block split; safe only for bodies with disjoint writes and no
// shared mutable state, which keeps results independent of the thread count.
template <typename F>
void parallel_for(int n, F&& body) {
  int threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (int i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace palm
