#include "dpmamba/bench.hpp"

#include <chrono>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dpmamba/alloc_stats.hpp"
#include "dpmamba/parameters.hpp"
#include "dpmamba/ssm.hpp"

namespace dpm {

BenchRow bench_scan(std::string_view impl, std::size_t L, std::size_t E, std::size_t H, std::uint64_t seed) {
  if (impl != "seq" && impl != "par" && impl != "oracle") {
    throw std::invalid_argument("bench_scan: impl must be seq, par or oracle, got '" + std::string(impl) + "'");
  }
  if (L == 0 || E == 0 || H == 0) throw std::invalid_argument("bench_scan: L, E and H must be positive");

  NoGradGuard no_grad;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.01, 0.5);
  const auto fill = [&](Shape shape, auto& dist) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v));
  };

  BenchRow row{std::string(impl), L, E, H, 0, 0};
  using clock = std::chrono::steady_clock;

  if (impl == "oracle") {
    if (L > ssm::kOracleMaxLength || H > ssm::kOracleMaxState) {
      throw std::invalid_argument("bench_scan: oracle is limited to L <= 1024 and H <= 32");
    }
    std::vector<ssm::DenseSsm> systems(E);
    for (auto& s : systems) {
      s.state = H;
      s.A.assign(H * H, 0.0);
      for (std::size_t i = 0; i < H; ++i) s.A[i * H + i] = -static_cast<double>(i + 1);
      s.B.resize(H);
      s.C.resize(H);
      for (auto& b : s.B) b = u(rng);
      for (auto& c : s.C) c = u(rng);
      s.delta = pos(rng);
    }
    const Tensor x = fill({1, L}, u);
    const auto t0 = clock::now();
    alloc::PeakScope scope;
    for (const auto& s : systems) (void)ssm::kernel_convolve(x, s);
    row.peak_bytes = scope.peak_growth();
    row.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    return row;
  }

  std::uniform_real_distribution<double> a_dist(-2.0, -0.1);
  ssm::SsmParams p{fill({E, H}, a_dist), fill({E, L}, pos), fill({L, H}, u), fill({L, H}, u)};
  const Tensor x = fill({E, L}, u);
  const auto t0 = clock::now();
  alloc::PeakScope scope;
  {
    const Tensor y = impl == "seq" ? ssm::scan_sequential(x, p) : ssm::scan_parallel(x, p);
    row.peak_bytes = scope.peak_growth();
  }
  row.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
  return row;
}

void write_bench_header(std::ostream& os) { os << "impl,L,E,H,wall_ns,peak_bytes\n"; }

void write_bench_row(std::ostream& os, const BenchRow& r) {
  os << r.impl << ',' << r.L << ',' << r.E << ',' << r.H << ',' << r.wall_ns << ',' << r.peak_bytes << '\n';
}

}  // namespace dpm
