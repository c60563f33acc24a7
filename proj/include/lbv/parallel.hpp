#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

#include "lbv/opcount.hpp"

namespace lbv {

/// Worker cap: LBV_THREADS env var if set, else hardware concurrency.
inline int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("LBV_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return cached;
}

/// Runs fn(begin, end) over a static partition of [0, n). Serial when only
/// one worker is available or the range is small; the partition itself does
/// not depend on the thread count beyond the number of chunks.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn, std::int64_t min_chunk = 1) {
  if (n <= 0) return;
  // Instrumented runs stay on the calling thread: the op tally is
  // thread-local and must observe every operation.
  const bool counting = detail::active_counts != nullptr;
  const int workers = counting ? 1
                               : static_cast<int>(std::min<std::int64_t>(
                                     max_threads(),
                                     std::max<std::int64_t>(1, n / std::max<std::int64_t>(1, min_chunk))));
  if (workers <= 1) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t b = w * chunk;
    const std::int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace lbv
