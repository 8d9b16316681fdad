#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dpmamba/gradcheck.hpp"
#include "dpmamba/ops.hpp"
#include "dpmamba/training.hpp"

using namespace dpm;
using namespace dpm::train;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<double> tone(std::size_t n, double freq, double phase = 0.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / 8000.0 + phase);
  return v;
}

// Textbook SI-SNR, written out independently of the library.
double oracle_si_snr(std::vector<double> e, std::vector<double> r) {
  const auto demean = [](std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double& x : v) x -= m;
  };
  demean(e);
  demean(r);
  double er = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    er += e[i] * r[i];
    rr += r[i] * r[i];
  }
  double ss = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double s = er / rr * r[i];
    ss += s * s;
    nn += (e[i] - s) * (e[i] - s);
  }
  return 10.0 * std::log10(ss / nn);
}

std::vector<double> add_scaled(const std::vector<double>& a, double alpha, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + alpha * b[i];
  return out;
}

Tensor row(const std::vector<double>& v) { return Tensor::from({1, v.size()}, v); }

SourcePool toy_pool(std::size_t length = 600) {
  SourcePool pool;
  for (std::size_t s = 0; s < 4; ++s) {
    auto v = tone(length, 200.0 + 150.0 * static_cast<double>(s));
    const auto n = noise(length, 50 + s, 0.05);
    for (std::size_t i = 0; i < length; ++i) v[i] += n[i];
    pool.signals.push_back(v);
    pool.speakers.push_back(s / 2);
  }
  return pool;
}

}  // namespace

TEST_CASE("perfect estimate hits the cap") {
  const auto r = noise(1000, 1);
  CHECK(si_snr(r, r) == doctest::Approx(kSiSnrCapDb).epsilon(1e-9));
  CHECK(si_snr(r, r) >= 80.0 - 1e-9);
}

TEST_CASE("estimate scale invariance") {
  const auto r = noise(500, 2);
  const auto e = add_scaled(r, 0.7, noise(500, 3));
  const double base = si_snr(e, r);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> alpha(0.01, 100.0);
  for (double a : {0.1, 3.0, -2.0, alpha(rng), alpha(rng), alpha(rng)}) {
    std::vector<double> scaled(e);
    for (double& x : scaled) x *= a;
    CHECK(std::abs(si_snr(scaled, r) - base) < 1e-9);
  }
  std::vector<double> rr(r);
  for (double& x : rr) x *= 0.1;
  CHECK(si_snr(r, r) == doctest::Approx(si_snr(rr, rr)).epsilon(1e-12));
}

TEST_CASE("direct formula oracle") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto r = noise(777, seed);
    const auto e = add_scaled(r, 0.3 + 0.2 * static_cast<double>(seed % 5), noise(777, seed + 100));
    CHECK(si_snr(e, r) == doctest::Approx(oracle_si_snr(e, r)).epsilon(1e-12));
  }
  // Nearly orthogonal estimate: a faint copy of the reference buried in noise.
  const auto r = tone(8000, 440.0);
  auto n = noise(8000, 21);
  double nr = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    nr += n[i] * r[i];
    rr += r[i] * r[i];
  }
  n = add_scaled(n, -nr / rr, r);
  const auto e = add_scaled(n, 1e-3, r);
  const double v = si_snr(e, r);
  CHECK(v < -50.0);
  CHECK(v == doctest::Approx(oracle_si_snr(e, r)).epsilon(1e-9));
}

TEST_CASE("all-zero reference is an error") {
  const std::vector<double> zero(100, 0.0), konst(100, 0.25);
  const auto e = noise(100, 5);
  CHECK_THROWS_AS((void)si_snr(e, zero), MetricError);
  // A constant reference is zero after mean removal.
  CHECK_THROWS_AS((void)si_snr(e, konst), MetricError);
  CHECK_THROWS_AS((void)si_snr(row(e), row(zero)), MetricError);
  CHECK_THROWS((void)si_snr(std::vector<double>(5, 1.0), e));
}

TEST_CASE("tensor SI-SNR agrees with the buffer version and floors at -80") {
  const auto r = noise(300, 6);
  const auto e = add_scaled(r, 1.5, noise(300, 7));
  CHECK(si_snr(row(e), row(r)).item() == doctest::Approx(si_snr(e, r)).epsilon(1e-14));
  const std::vector<double> silent(300, 0.0);
  CHECK(si_snr(silent, r) == doctest::Approx(-kSiSnrCapDb));
}

TEST_CASE("PIT picks the right assignment") {
  const auto a = noise(400, 8), b = noise(400, 9);
  const std::vector<Tensor> refs{row(a), row(b)};
  const PitResult same = pit_loss({row(a), row(b)}, refs);
  CHECK(same.permutation == std::vector<std::size_t>{0, 1});
  CHECK(same.loss.item() == doctest::Approx(-kSiSnrCapDb).epsilon(1e-9));
  const PitResult swapped = pit_loss({row(b), row(a)}, refs);
  CHECK(swapped.permutation == std::vector<std::size_t>{1, 0});
  CHECK(swapped.loss.item() == doctest::Approx(same.loss.item()).epsilon(1e-12));
}

TEST_CASE("PIT loss is the best fixed assignment") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r0 = noise(200, 100 + seed), r1 = noise(200, 200 + seed);
    const auto e0 = add_scaled(r0, 2.0, noise(200, 300 + seed));
    const auto e1 = add_scaled(r1, 0.5, noise(200, 400 + seed));
    const std::vector<Tensor> ests{row(e0), row(e1)}, refs{row(r0), row(r1)};
    const double identity = -(si_snr(e0, r0) + si_snr(e1, r1)) / 2.0;
    const double cross = -(si_snr(e1, r0) + si_snr(e0, r1)) / 2.0;
    const double loss = pit_loss(ests, refs).loss.item();
    CHECK(loss <= identity + 1e-12);
    CHECK(loss <= cross + 1e-12);
    CHECK(loss == doctest::Approx(std::min(identity, cross)).epsilon(1e-12));
    // Invariant under permuting estimates and under permuting references.
    CHECK(pit_loss({ests[1], ests[0]}, refs).loss.item() == doctest::Approx(loss).epsilon(1e-12));
    CHECK(pit_loss(ests, {refs[1], refs[0]}).loss.item() == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("PIT with three speakers checks all six assignments") {
  const auto a = noise(300, 30), b = noise(300, 31), c = noise(300, 32);
  const PitResult p = pit_loss({row(c), row(a), row(b)}, {row(a), row(b), row(c)});
  CHECK(p.permutation == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("improvement definitions") {
  const auto s0 = tone(2000, 300.0), s1 = noise(2000, 40, 0.5);
  std::vector<double> mix(2000);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = s0[i] + s1[i];
  const std::vector<std::span<const double>> refs{s0, s1};

  const Improvement zero = improvement({mix, mix}, refs, mix);
  CHECK(zero.si_snri == 0.0);
  CHECK(zero.sdri == 0.0);

  const Improvement ideal = improvement({s0, s1}, refs, mix);
  const double mix_score = (si_snr(mix, s0) + si_snr(mix, s1)) / 2.0;
  CHECK(ideal.si_snri == doctest::Approx(kSiSnrCapDb - mix_score).epsilon(1e-9));
  CHECK(ideal.si_snri > 50.0);

  const Improvement flipped = improvement({s1, s0}, refs, mix);
  CHECK(flipped.permutation == std::vector<std::size_t>{1, 0});
  CHECK(flipped.si_snri == doctest::Approx(ideal.si_snri));
}

TEST_CASE("sdr is scale-projected SNR") {
  const auto r = noise(500, 41);
  const auto e = add_scaled(r, 0.2, noise(500, 42));
  // Oracle: alpha = <e,r>/<r,r>, 10 log10 |alpha r|^2 / |e - alpha r|^2 without mean removal.
  double er = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    er += e[i] * r[i];
    rr += r[i] * r[i];
  }
  double ss = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    ss += er / rr * r[i] * er / rr * r[i];
    nn += (e[i] - er / rr * r[i]) * (e[i] - er / rr * r[i]);
  }
  CHECK(sdr(e, r) == doctest::Approx(10.0 * std::log10(ss / nn)).epsilon(1e-12));
}

TEST_CASE("schedule endpoints and shape") {
  const TrainSchedule s{1.5e-4, 200, 2000, 0.1, 1};
  CHECK(s.lr(0) == 0.0);
  CHECK(s.lr(100) == doctest::Approx(0.75e-4));
  CHECK(s.lr(200) == doctest::Approx(1.5e-4).epsilon(1e-15));
  CHECK(s.lr(2000) == doctest::Approx(1.5e-5).epsilon(1e-15));
  CHECK(s.lr(5000) == doctest::Approx(1.5e-5).epsilon(1e-15));
  CHECK(s.lr(1100) == doctest::Approx((1.5e-4 + 1.5e-5) / 2.0));
  // Continuity and monotone decay after warmup.
  double prev = s.lr(200);
  for (std::size_t t = 201; t <= 2000; ++t) {
    const double v = s.lr(t);
    CHECK(v <= prev);
    CHECK(prev - v < 1e-6);
    prev = v;
  }
  const TrainSchedule paper{};
  CHECK(paper.lr(20000) == doctest::Approx(1.5e-4));
  CHECK(paper.lr(paper.total_steps) == doctest::Approx(1.5e-5));
}

TEST_CASE("Adam first step moves each weight by lr against the gradient sign") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}).set_requires_grad(true);
  Adam opt({{"w", w}});
  dot(w, Tensor::from({3}, {2.0, -3.0, 0.0})).backward();
  opt.step(0.01);
  CHECK(w.data()[0] == doctest::Approx(0.99));
  CHECK(w.data()[1] == doctest::Approx(-1.99));
  CHECK(w.data()[2] == 0.5);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("mixtures are exact sums of gained sources") {
  const SourcePool pool = toy_pool();
  CHECK_THROWS_AS((void)mix_sources(pool, {0, 9}, {0, 0}, {1, 1}, 10), std::out_of_range);
  CHECK_THROWS_AS((void)mix_sources(pool, {0, 1}, {595, 0}, {1, 1}, 10), std::out_of_range);
  DynamicMixer mixer(pool, MixSpec{-5.0, 5.0, 0.1, 256, 7});
  for (int i = 0; i < 50; ++i) {
    const Mixture m = mixer.next();
    CHECK(m.source_index[0] != m.source_index[1]);
    CHECK(pool.speakers[m.source_index[0]] != pool.speakers[m.source_index[1]]);
    REQUIRE(m.mixture.size() == 256);
    double e0 = 0.0, e1 = 0.0;
    for (std::size_t t = 0; t < 256; ++t) {
      const double a = m.gains[0] * pool.signals[m.source_index[0]][m.offset[0] + t];
      const double b = m.gains[1] * pool.signals[m.source_index[1]][m.offset[1] + t];
      CHECK(m.sources[0][t] == a);
      CHECK(m.sources[1][t] == b);
      CHECK(m.mixture[t] == a + b);
      e0 += a * a;
      e1 += b * b;
    }
    const double rel = 10.0 * std::log10(e0 / e1);
    CHECK(rel >= -5.0 - 1e-9);
    CHECK(rel <= 5.0 + 1e-9);
  }
}

TEST_CASE("mixer is deterministic in the seed") {
  const SourcePool pool = toy_pool();
  DynamicMixer a(pool, MixSpec{-5.0, 5.0, 0.1, 128, 3}), b(pool, MixSpec{-5.0, 5.0, 0.1, 128, 3});
  for (int i = 0; i < 5; ++i) CHECK(a.next().mixture == b.next().mixture);
}

TEST_CASE("training is deterministic and logs every step") {
  ModelConfig c = preset("tiny");
  c.model_dim = 8;
  c.num_blocks = 1;
  c.state_dim = 4;
  c.chunk_size = 8;
  const SourcePool pool = toy_pool();
  DynamicMixer mixer(pool, MixSpec{-5.0, 5.0, 0.1, 256, 11});
  TrainOptions opt;
  opt.schedule = TrainSchedule{1e-3, 2, 6, 0.1, 1};
  opt.fixed_set = {mixer.next(), mixer.next()};
  opt.validation = opt.fixed_set;
  opt.eval_every = 3;

  SeparationModel m1(c, 5), m2(c, 5);
  const auto log1 = train_toy(m1, nullptr, opt);
  const auto log2 = train_toy(m2, nullptr, opt);
  REQUIRE(log1.size() == 6);
  REQUIRE(log2.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(log1[i].step == i);
    CHECK(log1[i].loss == log2[i].loss);
    CHECK(log1[i].lr == opt.schedule.lr(i));
  }
  CHECK(std::isnan(log1[0].si_snri_on_val));
  CHECK(std::isfinite(log1[2].si_snri_on_val));
  CHECK(std::isfinite(log1[5].si_snri_on_val));

  std::ostringstream os;
  write_log_csv(os, log1);
  const std::string csv = os.str();
  CHECK(csv.rfind("step,lr,loss,si_snri_on_val\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  // Dynamic mixing path with the same seed also reproduces itself.
  TrainOptions dyn;
  dyn.schedule = TrainSchedule{1e-3, 1, 3, 0.1, 1};
  DynamicMixer x1(pool, MixSpec{-5.0, 5.0, 0.1, 128, 12}), x2(pool, MixSpec{-5.0, 5.0, 0.1, 128, 12});
  SeparationModel d1(c, 6), d2(c, 6);
  const auto l1 = train_toy(d1, &x1, dyn), l2 = train_toy(d2, &x2, dyn);
  for (std::size_t i = 0; i < 3; ++i) CHECK(l1[i].loss == l2[i].loss);
}

TEST_CASE("training gradcheck suite") {
  for (const auto& r : check::run_suite("training")) {
    INFO(r.name << " err " << r.max_rel_error);
    CHECK(r.passed);
  }
}
