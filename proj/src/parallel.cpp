#include "dpmamba/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace dpm {

std::size_t worker_count() {
  static const std::size_t count = std::max(1u, std::thread::hardware_concurrency());
  return count;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t min_per_thread) {
  const std::size_t threads =
      std::min(worker_count(), min_per_thread ? n / std::max<std::size_t>(min_per_thread, 1) : n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const std::size_t per = (n + threads - 1) / threads;
  for (std::size_t w = 1; w < threads; ++w) {
    const std::size_t lo = w * per;
    const std::size_t hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (std::size_t i = 0; i < std::min(n, per); ++i) body(i);
  for (auto& t : pool) t.join();
}

}  // namespace dpm
