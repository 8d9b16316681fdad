#include "dpmamba/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "dpmamba/autograd.hpp"
#include "dpmamba/ops.hpp"

namespace dpm::train {

namespace {

struct Projection {
  std::vector<double> target;  // s
  std::vector<double> noise;   // e - s
  double target_energy = 0.0;
  double noise_energy = 0.0;
};

Projection project(std::span<const double> est, std::span<const double> ref, bool zero_mean) {
  if (est.size() != ref.size()) {
    throw ShapeError("si_snr: estimate has " + std::to_string(est.size()) + " samples, reference " +
                     std::to_string(ref.size()));
  }
  if (est.empty()) throw ShapeError("si_snr: empty signals");
  const double n = static_cast<double>(est.size());
  const double me = zero_mean ? std::accumulate(est.begin(), est.end(), 0.0) / n : 0.0;
  const double mr = zero_mean ? std::accumulate(ref.begin(), ref.end(), 0.0) / n : 0.0;
  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    dot += (est[i] - me) * (ref[i] - mr);
    ref_energy += (ref[i] - mr) * (ref[i] - mr);
  }
  if (ref_energy == 0.0) throw MetricError("si_snr: reference signal is all zero");
  const double alpha = dot / ref_energy;
  Projection p;
  p.target.resize(est.size());
  p.noise.resize(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    p.target[i] = alpha * (ref[i] - mr);
    p.noise[i] = (est[i] - me) - p.target[i];
    p.target_energy += p.target[i] * p.target[i];
    p.noise_energy += p.noise[i] * p.noise[i];
  }
  return p;
}

// Returns the dB value and whether it sits on a clamp (zero gradient there).
std::pair<double, bool> ratio_db(const Projection& p) {
  if (p.target_energy == 0.0) return {-kSiSnrCapDb, true};
  const double floor = kSiSnrEps * p.target_energy;
  if (p.noise_energy <= floor) return {kSiSnrCapDb, true};
  const double db = 10.0 * std::log10(p.target_energy / p.noise_energy);
  if (db < -kSiSnrCapDb) return {-kSiSnrCapDb, true};
  return {db, false};
}

}  // namespace

double si_snr(std::span<const double> estimate, std::span<const double> reference) {
  return ratio_db(project(estimate, reference, true)).first;
}

Tensor si_snr(const Tensor& estimate, const Tensor& reference) {
  autograd::require_same_shape("si_snr", estimate, reference);
  Projection p = project(estimate.data(), reference.data(), true);
  const auto [db, clamped] = ratio_db(p);
  return autograd::make_result(
      "si_snr", {}, {db}, {estimate},
      [estimate, clamped, p = std::move(p)](std::span<const double> g, std::span<const double>) {
        auto ge = autograd::grad_sink(estimate);
        if (ge.empty() || clamped) return;
        // d/de' = 20/ln10 (s/|s|^2 - n/|n|^2); s and n are already zero-mean,
        // so the centering Jacobian leaves this unchanged.
        const double k = 20.0 / std::numbers::ln10;
        for (std::size_t i = 0; i < ge.size(); ++i) {
          ge[i] += g[0] * k * (p.target[i] / p.target_energy - p.noise[i] / p.noise_energy);
        }
      });
}

double sdr(std::span<const double> estimate, std::span<const double> reference) {
  return ratio_db(project(estimate, reference, false)).first;
}

namespace {

template <typename Score>
std::vector<std::size_t> argmax_permutation(std::size_t n, Score score) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += score(perm[i], i);
    if (total > best_score) {
      best_score = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

PitResult pit_loss(const std::vector<Tensor>& estimates, const std::vector<Tensor>& references) {
  const std::size_t n = references.size();
  if (estimates.size() != n || n == 0) {
    throw ShapeError("pit_loss: need the same positive number of estimates and references");
  }
  std::vector<double> table(n * n);
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t r = 0; r < n; ++r) table[e * n + r] = si_snr(estimates[e].data(), references[r].data());
  }
  PitResult result;
  result.permutation = argmax_permutation(n, [&](std::size_t e, std::size_t r) { return table[e * n + r]; });
  Tensor total;
  for (std::size_t r = 0; r < n; ++r) {
    const Tensor term = si_snr(estimates[result.permutation[r]], references[r]);
    total = total.defined() ? add(total, term) : term;
  }
  result.loss = scale(total, -1.0 / static_cast<double>(n));
  result.value = result.loss.item();
  return result;
}

std::vector<std::size_t> best_permutation(const std::vector<std::span<const double>>& estimates,
                                          const std::vector<std::span<const double>>& references) {
  const std::size_t n = references.size();
  if (estimates.size() != n || n == 0) {
    throw ShapeError("best_permutation: need the same positive number of estimates and references");
  }
  std::vector<double> table(n * n);
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t r = 0; r < n; ++r) table[e * n + r] = si_snr(estimates[e], references[r]);
  }
  return argmax_permutation(n, [&](std::size_t e, std::size_t r) { return table[e * n + r]; });
}

Improvement improvement(const std::vector<std::span<const double>>& estimates,
                        const std::vector<std::span<const double>>& references,
                        std::span<const double> mixture) {
  Improvement out;
  out.permutation = best_permutation(estimates, references);
  const double n = static_cast<double>(references.size());
  for (std::size_t r = 0; r < references.size(); ++r) {
    const auto est = estimates[out.permutation[r]];
    out.si_snri += (si_snr(est, references[r]) - si_snr(mixture, references[r])) / n;
    out.sdri += (sdr(est, references[r]) - sdr(mixture, references[r])) / n;
  }
  return out;
}

// ---------------------------------------------------------------------------

double TrainSchedule::lr(std::size_t step) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double floor = floor_ratio * peak_lr;
  if (step >= total_steps || total_steps <= warmup_steps) return step >= total_steps ? floor : peak_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return floor + (peak_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(ParameterList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
    }
  }
}

void Adam::zero_grad() { zero_grads(params_); }

// ---------------------------------------------------------------------------

Mixture mix_sources(const SourcePool& pool, std::array<std::size_t, 2> index, std::array<std::size_t, 2> offset,
                    std::array<double, 2> gains, std::size_t length) {
  Mixture m;
  m.source_index = index;
  m.offset = offset;
  m.gains = gains;
  m.mixture.assign(length, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    if (index[k] >= pool.signals.size()) throw std::out_of_range("mix_sources: source index out of range");
    const auto& s = pool.signals[index[k]];
    if (offset[k] + length > s.size()) throw std::out_of_range("mix_sources: crop exceeds source length");
    m.sources[k].resize(length);
    for (std::size_t i = 0; i < length; ++i) m.sources[k][i] = gains[k] * s[offset[k] + i];
  }
  for (std::size_t i = 0; i < length; ++i) m.mixture[i] = m.sources[0][i] + m.sources[1][i];
  return m;
}

DynamicMixer::DynamicMixer(const SourcePool& pool, MixSpec spec) : pool_(pool), spec_(spec), rng_(spec.seed) {
  std::size_t usable = 0;
  for (const auto& s : pool_.signals) usable += s.size() >= spec_.segment_length ? 1 : 0;
  if (usable < 2) {
    throw std::invalid_argument("DynamicMixer: need at least two sources of >= segment_length samples");
  }
}

Mixture DynamicMixer::next() {
  const std::size_t n = pool_.signals.size();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const bool multi_speaker = [&] {
    for (std::size_t i = 1; i < pool_.speakers.size(); ++i) {
      if (pool_.speakers[i] != pool_.speakers[0]) return true;
    }
    return false;
  }();
  const auto usable = [&](std::size_t i) { return pool_.signals[i].size() >= spec_.segment_length; };
  std::size_t a = pick(rng_);
  while (!usable(a)) a = pick(rng_);
  std::size_t b = pick(rng_);
  while (b == a || !usable(b) || (multi_speaker && pool_.speakers[b] == pool_.speakers[a])) b = pick(rng_);

  std::array<std::size_t, 2> idx{a, b};
  std::array<std::size_t, 2> off{};
  std::array<double, 2> rms{};
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& s = pool_.signals[idx[k]];
    std::uniform_int_distribution<std::size_t> crop(0, s.size() - spec_.segment_length);
    off[k] = crop(rng_);
    double e = 0.0;
    for (std::size_t i = 0; i < spec_.segment_length; ++i) e += s[off[k] + i] * s[off[k] + i];
    rms[k] = std::sqrt(e / static_cast<double>(spec_.segment_length));
    if (rms[k] == 0.0) rms[k] = 1.0;
  }
  std::uniform_real_distribution<double> snr(spec_.snr_low_db, spec_.snr_high_db);
  const double rel_db = snr(rng_);
  const double g0 = spec_.target_rms / rms[0];
  const double g1 = spec_.target_rms * std::pow(10.0, -rel_db / 20.0) / rms[1];
  return mix_sources(pool_, idx, off, {g0, g1}, spec_.segment_length);
}

// ---------------------------------------------------------------------------

namespace {

Tensor row(const std::vector<double>& v) { return Tensor::from({1, v.size()}, v); }

}  // namespace

Improvement evaluate(const SeparationModel& model, const std::vector<Mixture>& set) {
  Improvement mean;
  if (set.empty()) return mean;
  NoGradGuard no_grad;
  for (const auto& m : set) {
    const auto est = model.separate(row(m.mixture));
    std::vector<std::span<const double>> es;
    for (const auto& e : est) es.push_back(e.data());
    const Improvement imp = improvement(es, {m.sources[0], m.sources[1]}, m.mixture);
    mean.si_snri += imp.si_snri / static_cast<double>(set.size());
    mean.sdri += imp.sdri / static_cast<double>(set.size());
  }
  return mean;
}

std::vector<TrainLogRow> train_toy(SeparationModel& model, DynamicMixer* mixer, const TrainOptions& options) {
  if (options.fixed_set.empty() && mixer == nullptr) {
    throw std::invalid_argument("train_toy: need a mixer or a fixed training set");
  }
  const TrainSchedule& sched = options.schedule;
  const std::size_t batch = std::max<std::size_t>(1, sched.batch_size);
  Adam adam(model.parameters(), options.adam);
  std::vector<TrainLogRow> log;
  std::size_t cursor = 0;

  const std::size_t steps = options.max_steps ? options.max_steps : sched.total_steps;
  for (std::size_t step = 0; step < steps; ++step) {
    adam.zero_grad();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Mixture m = options.fixed_set.empty() ? mixer->next()
                                                  : options.fixed_set[cursor++ % options.fixed_set.size()];
      const auto est = model.separate(row(m.mixture));
      const PitResult pit = pit_loss(est, {row(m.sources[0]), row(m.sources[1])});
      if (!std::isfinite(pit.value)) throw NumericalError("train_toy: non-finite loss at step " + std::to_string(step));
      scale(pit.loss, 1.0 / static_cast<double>(batch)).backward();
      loss_sum += pit.value;
    }
    const double lr = sched.lr(step);
    adam.step(lr);

    TrainLogRow r;
    r.step = step;
    r.lr = lr;
    r.loss = loss_sum / static_cast<double>(batch);
    const bool last = step + 1 == steps;
    if (options.eval_every && !options.validation.empty() && ((step + 1) % options.eval_every == 0 || last)) {
      r.si_snri_on_val = evaluate(model, options.validation).si_snri;
    }
    log.push_back(r);
    if (r.si_snri_on_val > options.stop_at_si_snri) break;
  }
  return log;
}

void write_log_csv(std::ostream& os, const std::vector<TrainLogRow>& rows) {
  os << "step,lr,loss,si_snri_on_val\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.lr << ',' << r.loss << ',';
    if (!std::isnan(r.si_snri_on_val)) os << r.si_snri_on_val;
    os << '\n';
  }
}

}  // namespace dpm::train
