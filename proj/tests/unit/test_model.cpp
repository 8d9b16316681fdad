#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "dpmamba/gradcheck.hpp"
#include "dpmamba/model.hpp"
#include "dpmamba/ops.hpp"

using namespace dpm;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<double> invert(std::vector<double> a, std::size_t n) {
  std::vector<double> inv(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    }
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(a[col * n + k], a[piv * n + k]);
      std::swap(inv[col * n + k], inv[piv * n + k]);
    }
    const double d = a[col * n + col];
    for (std::size_t k = 0; k < n; ++k) {
      a[col * n + k] /= d;
      inv[col * n + k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r * n + col];
      for (std::size_t k = 0; k < n; ++k) {
        a[r * n + k] -= f * a[col * n + k];
        inv[r * n + k] -= f * inv[col * n + k];
      }
    }
  }
  return inv;
}

double snr_db(std::span<const double> ref, std::span<const double> est) {
  double s = 0.0, n = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    s += ref[i] * ref[i];
    n += (ref[i] - est[i]) * (ref[i] - est[i]);
  }
  return 10.0 * std::log10(s / n);
}

}  // namespace

TEST_CASE("parameter counts against the published sizes") {
  struct Row {
    const char* name;
    ModelConfig config;
    double published;
  };
  ModelConfig h8 = preset("s"), h32 = preset("s"), uni = preset("s");
  h8.state_dim = 8;
  h32.state_dim = 32;
  uni.bidirectional = false;
  const std::vector<Row> rows{{"xs", preset("xs"), 2.3e6}, {"s", preset("s"), 8.1e6},
                              {"m", preset("m"), 15.9e6},  {"l", preset("l"), 59.8e6},
                              {"s/H8", h8, 7.7e6},         {"s/H32", h32, 8.9e6},
                              {"s/uni", uni, 7.4e6}};
  for (const auto& r : rows) {
    const double n = static_cast<double>(count_parameters(r.config));
    INFO(r.name << ": " << n);
    CHECK(std::abs(n - r.published) / r.published <= 0.02);
  }
}

TEST_CASE("parameter count formula matches the built model") {
  for (const char* name : {"tiny", "xs"}) {
    const ModelConfig c = preset(name);
    CHECK(SeparationModel(c, 1).parameter_count() == count_parameters(c));
  }
  ModelConfig c = preset("tiny");
  c.norm = NormKind::layer;
  c.bidirectional = false;
  c.num_speakers = 3;
  CHECK(SeparationModel(c, 1).parameter_count() == count_parameters(c));
}

TEST_CASE("parameter names are unique") {
  const SeparationModel model(preset("tiny"), 2);
  std::set<std::string> names;
  for (const auto& p : model.parameters()) CHECK(names.insert(p.name).second);
}

TEST_CASE("frame counts") {
  const SeparationModel model(preset("tiny"), 3);
  CHECK(model.frame_count(16) == 1);
  CHECK(model.frame_count(17) == 2);
  CHECK(model.padded_length(17) == 24);
  // Valid framing of 8000 samples with kernel 16, stride 8 yields 999 frames.
  CHECK(model.frame_count(8000) == 999);
  CHECK(model.frame_count(8008) == 1000);
  CHECK_THROWS_AS((void)model.frame_count(15), ShapeError);
  CHECK_THROWS_AS((void)model.encode(Tensor::zeros({1, 0})), ShapeError);
}

TEST_CASE("separated outputs have the input length") {
  const SeparationModel model(preset("tiny"), 4);
  for (std::size_t T : {16, 17, 8000, 32000}) {
    const auto out = model.separate(random_tensor({1, T}, T, -0.5, 0.5));
    REQUIRE(out.size() == 2);
    for (const auto& s : out) {
      CHECK(s.shape() == Shape{1, T});
      for (double v : s.data()) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("masks are nonnegative and shaped like the latent") {
  const SeparationModel model(preset("tiny"), 5);
  for (std::size_t N : {1, 5, 16, 57}) {
    const Tensor latent = random_tensor({model.config().model_dim, N}, 100 + N, -3, 3);
    const auto masks = model.masknet(latent);
    REQUIRE(masks.size() == 2);
    for (const auto& m : masks) {
      CHECK(m.shape() == Shape{model.config().model_dim, N});
      for (double v : m.data()) CHECK((std::isfinite(v) && v >= 0.0));
    }
  }
}

TEST_CASE("pseudo-inverse decoder reconstructs white noise") {
  ModelConfig c = preset("tiny");
  c.model_dim = 32;
  SeparationModel model(c, 6);
  const std::size_t D = 32, W = 16;
  const auto enc = model.encoder_weight().data();
  // pinv(E) = (E^T E)^-1 E^T; interior samples are covered by two frames.
  std::vector<double> gram(W * W, 0.0);
  for (std::size_t i = 0; i < W; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      for (std::size_t d = 0; d < D; ++d) gram[i * W + j] += enc[d * W + i] * enc[d * W + j];
    }
  }
  const auto gi = invert(gram, W);
  auto dec = model.decoder_weight().mutable_data();
  for (std::size_t i = 0; i < W; ++i) {
    for (std::size_t d = 0; d < D; ++d) {
      double v = 0.0;
      for (std::size_t j = 0; j < W; ++j) v += gi[i * W + j] * enc[d * W + j];
      dec[i * D + d] = 0.5 * v;
    }
  }
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<double> x(8000);
  for (auto& v : x) v = noise(rng);
  const Tensor wave = Tensor::from({1, 8000}, x);
  const Tensor y = model.decode(model.encode(wave), 8000);
  const std::span<const double> ys = y.data();
  // Edge samples are covered by one frame only.
  CHECK(snr_db(std::span<const double>(x).subspan(8, 7984), ys.subspan(8, 7984)) > 30.0);
  CHECK(snr_db(x, ys) > 30.0);
}

TEST_CASE("default decoder starts as the encoder's synthesis pair") {
  for (std::size_t D : {8, 16, 64}) {
    ModelConfig c = preset("tiny");
    c.model_dim = D;
    const SeparationModel model(c, 20 + D);
    std::mt19937_64 rng(D);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<double> x(4000);
    for (auto& v : x) v = noise(rng);
    const Tensor y = model.decode(model.encode(Tensor::from({1, 4000}, x)), 4000);
    const double snr = snr_db(std::span<const double>(x).subspan(8, 3984), y.data().subspan(8, 3984));
    INFO("D = " << D << ", SNR " << snr);
    // With fewer latent channels than taps the pair is a projection, not an inverse.
    if (D >= 16) CHECK(snr > 30.0);
    else CHECK(snr > 0.0);
  }
}

TEST_CASE("identity-like encoder is inverted by the matching decoder") {
  ModelConfig c = preset("tiny");
  c.model_dim = 16;
  SeparationModel model(c, 8);
  const std::size_t D = 16, W = 16, stride = 8;
  auto enc = model.encoder_weight().mutable_data();
  auto dec = model.decoder_weight().mutable_data();
  std::fill(enc.begin(), enc.end(), 0.0);
  std::fill(dec.begin(), dec.end(), 0.0);
  for (std::size_t d = 0; d < D; ++d) enc[d * W + d] = 1.0;
  // Keep only the first `stride` taps of each frame so frames do not overlap.
  for (std::size_t j = 0; j < stride; ++j) dec[j * D + j] = 1.0;
  const Tensor wave = random_tensor({1, 800}, 9);
  const Tensor latent = model.encode(wave);
  const std::size_t N = latent.dim(1);
  const Tensor y = model.decode(latent, 800);
  for (std::size_t t = 0; t < stride * N && t < 800; ++t) CHECK(y.at({0, t}) == wave.at({0, t}));
}

TEST_CASE("a zero mask decodes to silence") {
  const SeparationModel model(preset("tiny"), 10);
  const Tensor wave = random_tensor({1, 400}, 11);
  const Tensor latent = model.encode(wave);
  const Tensor silent = model.decode(mul(Tensor::zeros(latent.shape()), latent), 400);
  for (double v : silent.data()) CHECK(v == 0.0);
  const Tensor full = model.decode(mul(Tensor::full(latent.shape(), 1.0), latent), 400);
  CHECK(full.shape() == Shape{1, 400});
}

TEST_CASE("construction is deterministic in the seed") {
  const SeparationModel a(preset("tiny"), 12), b(preset("tiny"), 12), c(preset("tiny"), 13);
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto pa = a.parameters()[i].tensor.data(), pb = b.parameters()[i].tensor.data();
    const auto pc = c.parameters()[i].tensor.data();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin()));
    differs = differs || !std::equal(pa.begin(), pa.end(), pc.begin());
  }
  CHECK(differs);
}

TEST_CASE("config text round-trip and errors") {
  for (const char* name : {"xs", "s", "m", "l", "tiny"}) {
    ModelConfig c = preset(name);
    CHECK(parse_config(to_text(c)) == c);
    c.norm = NormKind::layer;
    c.bidirectional = false;
    c.exact_zoh = true;
    c.scan_impl = ssm::ScanImpl::parallel;
    CHECK(parse_config(to_text(c)) == c);
  }
  CHECK(preset("S") == preset("s"));
  const ModelConfig p = parse_config("# comment\npreset = m\nstate_dim = 32\n\n");
  CHECK(p.num_blocks == 16);
  CHECK(p.state_dim == 32);

  CHECK_THROWS_AS((void)preset("xxl"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("model_dim = abc\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("model_dim = -4\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("colour = blue\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("norm = batch\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("enc_kernel = 12\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("chunk_size = 7\n"), ConfigError);
  CHECK_THROWS_AS((void)parse_config("model_dim = 0\n"), ConfigError);
}

TEST_CASE("separation_model gradcheck suite") {
  for (const auto& r : check::run_suite("separation_model")) {
    INFO(r.name << " err " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.tolerance == check::kModelTol);
  }
}
