#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace d2h {

/// Process-wide worker cap. Set from --threads / D2H_THREADS; 1 disables
/// spawning entirely. Results must not depend on this value: every parallel
/// region assigns each output element to exactly one worker and reductions
/// stay in a fixed order within an element.
inline int& thread_count() {
  static int n = [] {
    if (const char* e = std::getenv("D2H_THREADS")) {
      int v = std::atoi(e);
      if (v >= 1) return v;
    }
    return 1;
  }();
  return n;
}

/// Static block partition of [0, count) over the worker cap.
inline void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& body) {
  int nt = thread_count();
  if (nt <= 1 || count < 2 * nt) {
    body(0, count);
    return;
  }
  std::vector<std::thread> workers;
  int64_t chunk = (count + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& w : workers) w.join();
}

}  // namespace d2h
