#pragma once

// SI-SNR objective with permutation-invariant assignment, evaluation metrics,
// Adam with warmup + cosine schedule, dynamic mixing and the toy training loop.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "dpmamba/model.hpp"

namespace dpm::train {

/// Raised for an all-zero reference, where SI-SNR is undefined.
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The noise energy is floored at kSiSnrEps times the target energy, which
/// caps SI-SNR at +80 dB. Results are also floored at -80 dB.
inline constexpr double kSiSnrEps = 1e-8;
inline constexpr double kSiSnrCapDb = 80.0;

/// Scale-invariant SNR in dB. Both signals are made zero-mean first;
/// s = (<e, r> / |r|^2) r and the value is 10 log10(|s|^2 / |e - s|^2).
double si_snr(std::span<const double> estimate, std::span<const double> reference);
/// Differentiable in `estimate`; `reference` is treated as data.
Tensor si_snr(const Tensor& estimate, const Tensor& reference);

/// SNR after least-squares scaling of the reference (no mean removal).
/// A light stand-in for BSS-eval SDR.
double sdr(std::span<const double> estimate, std::span<const double> reference);

struct PitResult {
  Tensor loss;  ///< -mean SI-SNR under the best assignment
  std::vector<std::size_t> permutation;  ///< estimate index used for each reference
  double value = 0.0;
};

/// Negative mean SI-SNR maximized over all estimate-to-reference assignments.
PitResult pit_loss(const std::vector<Tensor>& estimates, const std::vector<Tensor>& references);

/// Best assignment by mean SI-SNR over plain buffers.
std::vector<std::size_t> best_permutation(const std::vector<std::span<const double>>& estimates,
                                          const std::vector<std::span<const double>>& references);

struct Improvement {
  double si_snri = 0.0;
  double sdri = 0.0;
  std::vector<std::size_t> permutation;
};

/// metric(estimate, reference) - metric(mixture, reference), averaged over
/// speakers under the SI-SNR-optimal assignment.
Improvement improvement(const std::vector<std::span<const double>>& estimates,
                        const std::vector<std::span<const double>>& references,
                        std::span<const double> mixture);

// ---------------------------------------------------------------------------

/// Linear warmup from 0 to peak, then cosine decay to floor_ratio * peak.
struct TrainSchedule {
  double peak_lr = 1.5e-4;
  std::size_t warmup_steps = 20000;
  std::size_t total_steps = 2000000;
  double floor_ratio = 0.1;
  std::size_t batch_size = 1;

  double lr(std::size_t step) const;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParameterList params, AdamOptions options = {});
  /// One bias-corrected update from the accumulated gradients.
  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return steps_; }

 private:
  ParameterList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

// ---------------------------------------------------------------------------

struct SourcePool {
  std::vector<std::vector<double>> signals;
  std::vector<std::size_t> speakers;  ///< speaker id per signal
  std::uint32_t sample_rate = 8000;
};

struct MixSpec {
  double snr_low_db = -5.0;  ///< relative level of source 1 over source 2
  double snr_high_db = 5.0;
  double target_rms = 0.1;  ///< level of the first gained source
  std::size_t segment_length = 4000;
  std::uint64_t seed = 0;
};

/// mixture[i] == gains[0] * pool[source[0]][offset[0] + i]
///             + gains[1] * pool[source[1]][offset[1] + i]
struct Mixture {
  std::vector<double> mixture;
  std::array<std::vector<double>, 2> sources;  ///< gained references
  std::array<std::size_t, 2> source_index{};
  std::array<std::size_t, 2> offset{};
  std::array<double, 2> gains{};
};

/// Builds a mixture from two pool entries at the given offsets and gains.
Mixture mix_sources(const SourcePool& pool, std::array<std::size_t, 2> index,
                    std::array<std::size_t, 2> offset, std::array<double, 2> gains,
                    std::size_t length);

/// Draws fresh mixtures on demand: two distinct sources (from distinct
/// speakers when the pool has more than one), random crops, random relative level.
class DynamicMixer {
 public:
  DynamicMixer(const SourcePool& pool, MixSpec spec);
  Mixture next();

 private:
  const SourcePool& pool_;
  MixSpec spec_;
  Rng rng_;
};

struct TrainLogRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double si_snri_on_val = std::numeric_limits<double>::quiet_NaN();
};

struct TrainOptions {
  TrainSchedule schedule;
  /// Steps to run; 0 runs the whole schedule. A shorter run keeps the
  /// schedule's horizon, so the learning rate follows the same curve.
  std::size_t max_steps = 0;
  AdamOptions adam;
  /// When non-empty, each step uses these mixtures (cycled in batch_size
  /// groups) instead of the dynamic mixer.
  std::vector<Mixture> fixed_set;
  std::vector<Mixture> validation;
  std::size_t eval_every = 0;  ///< 0 disables validation
  /// Stop as soon as validation SI-SNRi exceeds this value.
  double stop_at_si_snri = std::numeric_limits<double>::infinity();
};

/// Mean SI-SNRi / SDRi of the model over the given mixtures.
Improvement evaluate(const SeparationModel& model, const std::vector<Mixture>& set);

/// Adam + schedule on PIT SI-SNR. Throws NumericalError when the loss turns
/// non-finite. `mixer` may be null when options.fixed_set is used.
std::vector<TrainLogRow> train_toy(SeparationModel& model, DynamicMixer* mixer, const TrainOptions& options);

void write_log_csv(std::ostream& os, const std::vector<TrainLogRow>& rows);

}  // namespace dpm::train
