#pragma once

// Heap accounting. The counters only move in executables that link the
// replacement operator new/delete (the dpmamba_alloc_tracking object library);
// elsewhere tracking_enabled() is false and every reading is zero.

#include <cstddef>

namespace dpm::alloc {

bool tracking_enabled();
std::size_t live_bytes();
std::size_t peak_bytes();
/// Sets the peak to the current live byte count.
void reset_peak();

/// Peak heap growth over the scope's lifetime, relative to the live bytes at entry.
class PeakScope {
 public:
  PeakScope();
  std::size_t peak_growth() const;

 private:
  std::size_t baseline_;
};

namespace detail {
void set_tracking_enabled();
void on_allocate(std::size_t bytes);
void on_free(std::size_t bytes);
}  // namespace detail

}  // namespace dpm::alloc
