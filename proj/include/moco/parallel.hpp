#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace moco {

namespace detail {
inline int& thread_count_ref() {
  static int count = [] {
    if (const char* env = std::getenv("MOCO_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
  }();
  return count;
}
}  // namespace detail

inline int thread_count() { return detail::thread_count_ref(); }
inline void set_thread_count(int n) { detail::thread_count_ref() = std::max(1, n); }

/// Splits [begin, end) into contiguous chunks, one worker per chunk.
/// Every index is owned by exactly one worker, so results do not depend
/// on the thread count as long as f writes only to its own indices.
template <class F>
void parallel_for(int64_t begin, int64_t end, F&& f, int64_t grain = 1) {
  int64_t n = end - begin;
  if (n <= 0) return;
  int workers = std::min<int64_t>(thread_count(), (n + grain - 1) / grain);
  if (workers <= 1) {
    f(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  int64_t chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    int64_t b = begin + w * chunk;
    int64_t e = std::min(end, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&f, b, e] { f(b, e); });
  }
  f(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

}  // namespace moco
