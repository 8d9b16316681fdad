#pragma once

#include <cstddef>
#include <functional>

namespace dpm {

/// Runs body(i) for i in [0, n). Work is split into contiguous ranges over the
/// available hardware threads; with one thread (or small n) it runs inline.
/// Each index is processed exactly once, so results are deterministic as long
/// as body(i) only writes state owned by i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t min_per_thread = 1);

std::size_t worker_count();

}  // namespace dpm
