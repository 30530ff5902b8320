#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace evib::detail {

// Chunked parallel loop over [0, n). fn is called as fn(begin, end) with
// disjoint half-open ranges. Falls back to a plain loop for small n or when
// only one hardware thread is available. Results must not depend on chunk
// boundaries; callers own any merging.
template <typename Fn>
void parallel_chunks(std::size_t n, Fn&& fn, std::size_t min_per_thread = 1024) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t threads = std::min(hw, n / std::max<std::size_t>(1, min_per_thread));
  if (n == 0) return;
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t i = 0; i < threads; ++i) {
    const std::size_t b = i * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace evib::detail
