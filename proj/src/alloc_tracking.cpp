// Replacement global allocation functions. Each block carries a 16-byte
// header holding its size so frees can be accounted exactly.

#include <cstdlib>
#include <new>

#include "dpmamba/alloc_stats.hpp"

namespace {

constexpr std::size_t kHeader = 16;
static_assert(kHeader >= alignof(std::max_align_t));

void* tracked_alloc(std::size_t n) noexcept {
  void* raw = std::malloc(n + kHeader);
  if (raw == nullptr) return nullptr;
  *static_cast<std::size_t*>(raw) = n;
  dpm::alloc::detail::on_allocate(n);
  return static_cast<char*>(raw) + kHeader;
}

void tracked_free(void* p) noexcept {
  if (p == nullptr) return;
  void* raw = static_cast<char*>(p) - kHeader;
  dpm::alloc::detail::on_free(*static_cast<std::size_t*>(raw));
  std::free(raw);
}

void* throwing_alloc(std::size_t n) {
  for (;;) {
    if (void* p = tracked_alloc(n)) return p;
    auto handler = std::get_new_handler();
    if (handler == nullptr) throw std::bad_alloc();
    handler();
  }
}

[[maybe_unused]] const bool g_registered = [] {
  dpm::alloc::detail::set_tracking_enabled();
  return true;
}();

}  // namespace

void* operator new(std::size_t n) { return throwing_alloc(n); }
void* operator new[](std::size_t n) { return throwing_alloc(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return tracked_alloc(n); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return tracked_alloc(n); }
void operator delete(void* p) noexcept { tracked_free(p); }
void operator delete[](void* p) noexcept { tracked_free(p); }
void operator delete(void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete[](void* p, std::size_t) noexcept { tracked_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { tracked_free(p); }
