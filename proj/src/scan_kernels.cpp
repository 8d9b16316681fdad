#include "dpmamba/scan_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpmamba/parallel.hpp"
#include "dpmamba/tensor.hpp"

namespace dpm::ssm {

namespace {

struct Coefficients {
  double a;
  double b;  // Bbar, to be multiplied by x_t
};

// Per-element zero-order-hold coefficients for a diagonal state entry.
inline Coefficients coefficients(double delta, double A, double B, Discretization mode) {
  const double z = delta * A;
  const double a = std::exp(z);
  if (mode == Discretization::euler) return {a, delta * B};
  // (exp(z) - 1) / A * B, with the A -> 0 limit delta * B.
  const double phi = A == 0.0 ? delta : std::expm1(z) / A;
  return {a, phi * B};
}

std::size_t default_block(std::size_t seg) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(seg)))));
}

}  // namespace

void validate(const ScanView& v) {
  const auto fail = [](const std::string& what) { throw ShapeError("selective scan: " + what); };
  if (v.x.size() != v.channels * v.length) fail("x must hold channels x length values");
  if (v.delta.size() != v.x.size()) fail("delta must match x");
  if (v.A.size() != v.channels * v.state) fail("A must hold channels x state values");
  if (v.B.size() != v.length * v.state) fail("length mismatch between x and B");
  if (v.C.size() != v.length * v.state) fail("length mismatch between x and C");
  if (!v.skip.empty() && v.skip.size() != v.channels) fail("skip must hold one value per channel");
  if (v.segment && v.length % v.segment != 0) fail("segment length must divide sequence length");
  for (double d : v.delta) {
    if (!(d > 0.0) || !std::isfinite(d)) throw NumericalError("selective scan: delta must be finite and > 0");
  }
  for (double a : v.A) {
    if (!(a <= 0.0) || !std::isfinite(a)) throw NumericalError("selective scan: A must be finite and <= 0");
  }
}

void scan_sequential_kernel(const ScanView& v, std::span<double> y) {
  const std::size_t L = v.length, H = v.state, seg = v.segment_length();
  std::vector<double> h(H);
  for (std::size_t e = 0; e < v.channels; ++e) {
    const double* Ae = v.A.data() + e * H;
    const double skip = v.skip.empty() ? 0.0 : v.skip[e];
    for (std::size_t s0 = 0; s0 < L; s0 += seg) {
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t t = s0; t < s0 + seg; ++t) {
        const double d = v.delta[e * L + t];
        const double xv = v.x[e * L + t];
        const double* Bt = v.B.data() + t * H;
        const double* Ct = v.C.data() + t * H;
        double acc = 0.0;
        for (std::size_t n = 0; n < H; ++n) {
          const auto [a, b] = coefficients(d, Ae[n], Bt[n], v.discretization);
          h[n] = a * h[n] + b * xv;
          acc += Ct[n] * h[n];
        }
        y[e * L + t] = acc + skip * xv;
      }
    }
  }
}

void scan_parallel_kernel(const ScanView& v, std::span<double> y, std::size_t block) {
  const std::size_t L = v.length, H = v.state, seg = v.segment_length();
  if (L == 0) return;
  if (block == 0) block = default_block(seg);
  const std::size_t blocks_per_seg = (seg + block - 1) / block;
  const std::size_t segs = L / seg;

  for (std::size_t e = 0; e < v.channels; ++e) {
    const double* Ae = v.A.data() + e * H;
    const double skip = v.skip.empty() ? 0.0 : v.skip[e];
    for (std::size_t s = 0; s < segs; ++s) {
      const std::size_t s0 = s * seg;
      // Phase 1: fold each block into a single step per state entry.
      std::vector<RecurrenceStep> aggregate(blocks_per_seg * H);
      parallel_for(blocks_per_seg, [&](std::size_t blk) {
        const std::size_t lo = s0 + blk * block;
        const std::size_t hi = std::min(s0 + seg, lo + block);
        RecurrenceStep* agg = aggregate.data() + blk * H;
        for (std::size_t t = lo; t < hi; ++t) {
          const double d = v.delta[e * L + t];
          const double xv = v.x[e * L + t];
          const double* Bt = v.B.data() + t * H;
          for (std::size_t n = 0; n < H; ++n) {
            const auto [a, b] = coefficients(d, Ae[n], Bt[n], v.discretization);
            agg[n] = combine(agg[n], {a, b * xv});
          }
        }
      });
      // Phase 2: exclusive scan of the aggregates gives each block's entry state.
      std::vector<double> carry(blocks_per_seg * H, 0.0);
      for (std::size_t blk = 1; blk < blocks_per_seg; ++blk) {
        for (std::size_t n = 0; n < H; ++n) {
          const RecurrenceStep& prev = aggregate[(blk - 1) * H + n];
          carry[blk * H + n] = prev.a * carry[(blk - 1) * H + n] + prev.b;
        }
      }
      // Phase 3: rescan every block from its carried-in state and emit outputs.
      parallel_for(blocks_per_seg, [&](std::size_t blk) {
        const std::size_t lo = s0 + blk * block;
        const std::size_t hi = std::min(s0 + seg, lo + block);
        std::vector<double> h(carry.begin() + blk * H, carry.begin() + (blk + 1) * H);
        for (std::size_t t = lo; t < hi; ++t) {
          const double d = v.delta[e * L + t];
          const double xv = v.x[e * L + t];
          const double* Bt = v.B.data() + t * H;
          const double* Ct = v.C.data() + t * H;
          double acc = 0.0;
          for (std::size_t n = 0; n < H; ++n) {
            const auto [a, b] = coefficients(d, Ae[n], Bt[n], v.discretization);
            h[n] = a * h[n] + b * xv;
            acc += Ct[n] * h[n];
          }
          y[e * L + t] = acc + skip * xv;
        }
      });
    }
  }
}

void scan_backward_kernel(const ScanView& v, std::span<const double> dy, const ScanGrads& g) {
  const std::size_t L = v.length, H = v.state, seg = v.segment_length();
  if (L == 0) return;
  const std::size_t block = default_block(seg);
  const std::size_t blocks_per_seg = (seg + block - 1) / block;
  const bool zoh = v.discretization == Discretization::exact_zoh;

  std::vector<double> checkpoints(blocks_per_seg * H);
  std::vector<double> states(block * H);
  std::vector<double> carry(H);
  std::vector<double> h(H);

  for (std::size_t e = 0; e < v.channels; ++e) {
    const double* Ae = v.A.data() + e * H;
    const double skip = v.skip.empty() ? 0.0 : v.skip[e];
    for (std::size_t s0 = 0; s0 < L; s0 += seg) {
      // Forward sweep keeping only the state at each block entry.
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t t = s0; t < s0 + seg; ++t) {
        if ((t - s0) % block == 0) std::copy(h.begin(), h.end(), checkpoints.begin() + ((t - s0) / block) * H);
        const double d = v.delta[e * L + t];
        const double xv = v.x[e * L + t];
        const double* Bt = v.B.data() + t * H;
        for (std::size_t n = 0; n < H; ++n) {
          const auto [a, b] = coefficients(d, Ae[n], Bt[n], v.discretization);
          h[n] = a * h[n] + b * xv;
        }
      }

      std::fill(carry.begin(), carry.end(), 0.0);
      for (std::size_t blk = blocks_per_seg; blk-- > 0;) {
        const std::size_t lo = s0 + blk * block;
        const std::size_t hi = std::min(s0 + seg, lo + block);
        // Recompute this block's states.
        std::copy(checkpoints.begin() + blk * H, checkpoints.begin() + (blk + 1) * H, h.begin());
        for (std::size_t t = lo; t < hi; ++t) {
          const double d = v.delta[e * L + t];
          const double xv = v.x[e * L + t];
          const double* Bt = v.B.data() + t * H;
          for (std::size_t n = 0; n < H; ++n) {
            const auto [a, b] = coefficients(d, Ae[n], Bt[n], v.discretization);
            h[n] = a * h[n] + b * xv;
            states[(t - lo) * H + n] = h[n];
          }
        }
        for (std::size_t t = hi; t-- > lo;) {
          const std::size_t idx = e * L + t;
          const double d = v.delta[idx];
          const double xv = v.x[idx];
          const double gy = dy[idx];
          const double* Bt = v.B.data() + t * H;
          const double* Ct = v.C.data() + t * H;
          const double* ht = states.data() + (t - lo) * H;
          const double* hprev = t == lo ? checkpoints.data() + blk * H : states.data() + (t - lo - 1) * H;
          double gx = gy * skip;
          double gdelta = 0.0;
          for (std::size_t n = 0; n < H; ++n) {
            const double An = Ae[n];
            const auto [a, b] = coefficients(d, An, Bt[n], v.discretization);
            const double gh = gy * Ct[n] + carry[n];
            if (!g.C.empty()) g.C[t * H + n] += gy * ht[n];
            const double ga = gh * hprev[n];
            const double gb = gh * xv;
            gx += gh * b;
            // a = exp(delta A)
            gdelta += ga * a * An;
            if (!g.A.empty()) g.A[e * H + n] += ga * a * d;
            if (zoh) {
              // b = expm1(delta A) / A * B
              gdelta += gb * a * Bt[n];
              if (!g.A.empty() && An != 0.0) {
                const double z = d * An;
                g.A[e * H + n] += gb * Bt[n] * (z * a - std::expm1(z)) / (An * An);
              } else if (!g.A.empty()) {
                g.A[e * H + n] += gb * Bt[n] * 0.5 * d * d;
              }
              if (!g.B.empty()) g.B[t * H + n] += gb * (An == 0.0 ? d : std::expm1(d * An) / An);
            } else {
              gdelta += gb * Bt[n];
              if (!g.B.empty()) g.B[t * H + n] += gb * d;
            }
            carry[n] = gh * a;
          }
          if (!g.x.empty()) g.x[idx] += gx;
          if (!g.delta.empty()) g.delta[idx] += gdelta;
          if (!g.skip.empty()) g.skip[e] += gy * xv;
        }
      }
    }
  }
}

}  // namespace dpm::ssm
