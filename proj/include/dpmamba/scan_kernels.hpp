#pragma once

// Raw selective-scan kernels over flat buffers. The differentiable wrapper in
// ssm.hpp and the benchmark harness both sit on top of these.

#include <cstddef>
#include <span>

namespace dpm::ssm {

enum class Discretization {
  euler,      ///< Bbar = delta * B
  exact_zoh,  ///< Bbar = (delta A)^-1 (exp(delta A) - 1) delta B
};

/// Read-only view of one scan problem. The last axis of x/delta holds
/// `length / segment` independent sequences, each starting from h = 0.
struct ScanView {
  std::span<const double> x;      // [channels x length]
  std::span<const double> delta;  // [channels x length], > 0
  std::span<const double> A;      // [channels x state], <= 0
  std::span<const double> B;      // [length x state]
  std::span<const double> C;      // [length x state]
  std::span<const double> skip;   // [channels] or empty
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t state = 0;
  std::size_t segment = 0;  // 0 means one sequence of `length`
  Discretization discretization = Discretization::euler;

  std::size_t segment_length() const { return segment ? segment : length; }
};

/// Gradient sinks; an empty span skips that gradient. All are accumulated into.
struct ScanGrads {
  std::span<double> x;
  std::span<double> delta;
  std::span<double> A;
  std::span<double> B;
  std::span<double> C;
  std::span<double> skip;
};

/// One step of h_t = a * h_{t-1} + b as the pair (a, b). Composition is
/// associative: applying `first` then `second` equals the single step
/// (second.a * first.a, second.a * first.b + second.b).
struct RecurrenceStep {
  double a = 1.0;
  double b = 0.0;
};

inline RecurrenceStep combine(const RecurrenceStep& first, const RecurrenceStep& second) {
  return {second.a * first.a, second.a * first.b + second.b};
}

/// Throws ShapeError / NumericalError when the view is inconsistent or
/// delta <= 0 or A > 0 somewhere.
void validate(const ScanView& view);

/// Plain linear recurrence. Working memory beyond the output is one state vector.
void scan_sequential_kernel(const ScanView& view, std::span<double> y);

/// Blocked associative scan: per-block aggregates, an exclusive scan of the
/// aggregates, then a rescan of each block from its carried-in state. Blocks are
/// processed on a worker pool when more than one hardware thread is available.
/// `block` = 0 picks ceil(sqrt(segment length)).
void scan_parallel_kernel(const ScanView& view, std::span<double> y, std::size_t block = 0);

/// Reverse sweep. Hidden states are recomputed block by block from sparse
/// checkpoints instead of being stored for the whole sequence.
void scan_backward_kernel(const ScanView& view, std::span<const double> dy, const ScanGrads& grads);

}  // namespace dpm::ssm
