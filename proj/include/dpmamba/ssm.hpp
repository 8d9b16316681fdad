#pragma once

// Selective state-space primitive: discretization, differentiable scans and
// the dense time-invariant reference used to cross-check them.

#include <cstddef>
#include <vector>

#include "dpmamba/scan_kernels.hpp"
#include "dpmamba/tensor.hpp"

namespace dpm::ssm {

enum class ScanImpl { sequential, parallel };

/// Discrete-time parameters of a diagonal selective SSM.
struct SsmParams {
  Tensor A;      ///< [E x H], continuous-time diagonal, <= 0 (strictly < 0 when built from A_log)
  Tensor delta;  ///< [E x L], > 0
  Tensor B;      ///< [L x H]
  Tensor C;      ///< [L x H]
};

struct ScanOptions {
  Discretization discretization = Discretization::euler;
  ScanImpl impl = ScanImpl::sequential;
  /// Length of each independent sequence packed along the time axis; 0 = one sequence.
  std::size_t segment = 0;
};

struct Discretized {
  Tensor Abar;  ///< [E x L x H]
  Tensor Bbar;  ///< [E x L x H]
};

/// Materializes the per-step transition and input coefficients.
/// Abar = exp(delta * A); Bbar per `mode`.
Discretized discretize(const Tensor& A, const Tensor& delta, const Tensor& B,
                       Discretization mode = Discretization::euler);

/// y[e,t] = sum_n C[t,n] h[e,t,n] + skip[e] x[e,t],
/// h[e,t,:] = Abar[e,t,:] * h[e,t-1,:] + Bbar[e,t,:] * x[e,t], h starts at 0.
/// `skip` may be undefined. Differentiable in every tensor argument.
Tensor selective_scan(const Tensor& x, const SsmParams& params, const Tensor& skip,
                      const ScanOptions& options = {});

Tensor scan_sequential(const Tensor& x, const SsmParams& params,
                       Discretization mode = Discretization::euler);
Tensor scan_parallel(const Tensor& x, const SsmParams& params,
                     Discretization mode = Discretization::euler);

/// Projections that make delta, B and C functions of the input.
struct SelectiveProjection {
  Tensor dt_down;  ///< [r x E]  rank-reduced delta path
  Tensor dt_up;    ///< [E x r]
  Tensor dt_bias;  ///< [E]
  Tensor B_proj;   ///< [H x E]
  Tensor C_proj;   ///< [H x E]
  Tensor A_log;    ///< [E x H]; A = -exp(A_log)
};

/// delta_t = softplus(dt_up dt_down x_t + dt_bias), B_t = B_proj x_t,
/// C_t = C_proj x_t, A = -exp(A_log).
SsmParams selective_parameterize(const Tensor& x, const SelectiveProjection& w);

/// Time-invariant SSM with a full state matrix. Reference only.
struct DenseSsm {
  std::size_t state = 0;
  std::vector<double> A;  ///< [H x H] row-major
  std::vector<double> B;  ///< [H]
  std::vector<double> C;  ///< [H]
  double delta = 1.0;
  Discretization discretization = Discretization::exact_zoh;
};

struct DenseDiscretized {
  std::vector<double> Abar;  ///< [H x H]
  std::vector<double> Bbar;  ///< [H]
};

/// exp(delta A) by scaling and squaring; Bbar from the augmented exponential
/// [[dA, dB], [0, 0]] so that singular A is handled.
DenseDiscretized discretize_dense(const DenseSsm& ssm);

/// K = (C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar).
std::vector<double> ssm_kernel(const DenseSsm& ssm, std::size_t length);

/// x[1 x L] convolved with the materialized kernel. Rejects H > 32 or L > 1024.
Tensor kernel_convolve(const Tensor& x, const DenseSsm& ssm);

inline constexpr std::size_t kOracleMaxState = 32;
inline constexpr std::size_t kOracleMaxLength = 1024;

}  // namespace dpm::ssm
