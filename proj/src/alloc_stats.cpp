#include "dpmamba/alloc_stats.hpp"

#include <atomic>

namespace dpm::alloc {

namespace {
std::atomic<bool> g_enabled{false};
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

bool tracking_enabled() { return g_enabled.load(std::memory_order_relaxed); }
std::size_t live_bytes() { return g_live.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
void reset_peak() { g_peak.store(g_live.load(std::memory_order_relaxed), std::memory_order_relaxed); }

PeakScope::PeakScope() : baseline_(live_bytes()) { reset_peak(); }

std::size_t PeakScope::peak_growth() const {
  const std::size_t p = peak_bytes();
  return p > baseline_ ? p - baseline_ : 0;
}

namespace detail {

void set_tracking_enabled() { g_enabled.store(true, std::memory_order_relaxed); }

void on_allocate(std::size_t bytes) {
  const std::size_t now = g_live.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void on_free(std::size_t bytes) { g_live.fetch_sub(bytes, std::memory_order_relaxed); }

}  // namespace detail

}  // namespace dpm::alloc
