#pragma once

// Scan benchmark harness behind `dpmamba bench-scan`.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dpm {

struct BenchRow {
  std::string impl;  ///< seq, par or oracle
  std::size_t L = 0;
  std::size_t E = 0;
  std::size_t H = 0;
  std::uint64_t wall_ns = 0;
  /// Peak heap growth during the scan call, output buffer included. Zero when
  /// the executable does not link allocation tracking.
  std::size_t peak_bytes = 0;
};

/// Times one forward scan on random selective parameters (no gradient
/// tracking). "oracle" runs the dense kernel convolution per channel and is
/// limited to L <= 1024, H <= 32.
BenchRow bench_scan(std::string_view impl, std::size_t L, std::size_t E, std::size_t H, std::uint64_t seed = 0);

void write_bench_header(std::ostream& os);
void write_bench_row(std::ostream& os, const BenchRow& row);

}  // namespace dpm
