#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "dpmamba/checkpoint.hpp"
#include "dpmamba/corpus.hpp"
#include "dpmamba/wav.hpp"

using namespace dpm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("dpmamba_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Hand-built RIFF header so the reader is checked against an independent writer.
std::string make_wav(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, std::uint32_t rate,
                     const std::vector<std::int16_t>& frames) {
  std::string data;
  for (auto v : frames) put16(data, static_cast<std::uint16_t>(v));
  std::string s = "RIFF";
  put32(s, static_cast<std::uint32_t>(36 + data.size()));
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, format);
  put16(s, channels);
  put32(s, rate);
  put32(s, rate * channels * bits / 8);
  put16(s, static_cast<std::uint16_t>(channels * bits / 8));
  put16(s, bits);
  s += "data";
  put32(s, static_cast<std::uint32_t>(data.size()));
  return s + data;
}

// Power-weighted mean frequency from a direct DFT.
double spectral_centroid(const std::vector<double>& x, double rate) {
  const std::size_t n = x.size();
  double num = 0.0, den = 0.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ph = 2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      re += x[t] * std::cos(ph);
      im -= x[t] * std::sin(ph);
    }
    const double p = re * re + im * im;
    num += p * static_cast<double>(k) * rate / static_cast<double>(n);
    den += p;
  }
  return num / den;
}

}  // namespace

TEST_CASE("wav round-trip stays within one quantization step") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  WavBuffer w{8000, std::vector<double>(4000)};
  for (auto& x : w.samples) x = u(rng);
  w.samples[0] = -1.0;
  w.samples[1] = 1.0 - 1.0 / 32768.0;
  const WavBuffer back = decode_wav(encode_wav(w));
  CHECK(back.sample_rate == 8000);
  REQUIRE(back.samples.size() == w.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
  CHECK(worst <= 1.0 / 32768.0);
  CHECK(back.samples[0] == -1.0);
  // Re-encoding decoded samples is lossless.
  CHECK(encode_wav(back) == encode_wav(decode_wav(encode_wav(back))));
}

TEST_CASE("wav silence and files on disk") {
  TempDir dir("wav");
  const WavBuffer silent{16000, std::vector<double>(321, 0.0)};
  write_wav(dir.path / "s.wav", silent);
  const WavBuffer back = read_wav(dir.path / "s.wav");
  CHECK(back.sample_rate == 16000);
  CHECK(back.samples == silent.samples);
  CHECK(fs::file_size(dir.path / "s.wav") == 44 + 2 * 321);
}

TEST_CASE("wav reader agrees with an independent writer") {
  const std::vector<std::int16_t> q{0, 1, -1, 32767, -32768, 1234};
  const WavBuffer w = decode_wav(make_wav(1, 1, 16, 8000, q));
  REQUIRE(w.samples.size() == q.size());
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(w.samples[i] == q[i] / 32768.0);
  CHECK(encode_wav(w) == make_wav(1, 1, 16, 8000, q));
}

TEST_CASE("wav rejects unsupported and malformed files") {
  CHECK_THROWS_AS((void)decode_wav(make_wav(1, 2, 16, 8000, {1, 2, 3, 4})), UnsupportedFormat);
  CHECK_THROWS_AS((void)decode_wav(make_wav(1, 1, 8, 8000, {1, 2})), UnsupportedFormat);
  CHECK_THROWS_AS((void)decode_wav(make_wav(3, 1, 16, 8000, {1, 2})), UnsupportedFormat);
  CHECK_THROWS_AS((void)decode_wav("RIFX0000WAVE"), FormatError);
  std::string truncated = make_wav(1, 1, 16, 8000, {1, 2, 3, 4});
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS((void)decode_wav(truncated), FormatError);
  CHECK_THROWS_AS((void)read_wav("/nonexistent/dir/x.wav"), FormatError);
  TempDir dir("wavbad");
  std::ofstream(dir.path / "stereo.wav", std::ios::binary) << make_wav(1, 2, 16, 8000, {1, 2});
  CHECK_THROWS_AS((void)read_wav(dir.path / "stereo.wav"), UnsupportedFormat);
}

TEST_CASE("synthetic corpus is byte-identical per seed") {
  TempDir a("corpa"), b("corpb"), c("corpc");
  const CorpusSpec spec{42, 3, 2, 0.25, 8000};
  synth_corpus(a.path, spec);
  synth_corpus(b.path, spec);
  CorpusSpec other = spec;
  other.seed = 43;
  synth_corpus(c.path, other);
  CHECK(slurp(a.path / "manifest.txt") == slurp(b.path / "manifest.txt"));
  bool any_diff = false;
  for (const auto& e : read_manifest(a.path / "manifest.txt")) {
    const auto rel = fs::relative(e.path, a.path);
    CHECK(slurp(e.path) == slurp(b.path / rel));
    any_diff = any_diff || slurp(e.path) != slurp(c.path / rel);
  }
  CHECK(any_diff);
}

TEST_CASE("synthetic speakers have distinct spectral centroids") {
  const std::size_t n = 2048;
  std::vector<double> centroid;
  for (std::size_t s = 0; s < 4; ++s) {
    double mean = 0.0;
    for (std::size_t u = 0; u < 3; ++u) mean += spectral_centroid(synth_source(s, u, 5, n), 8000.0);
    centroid.push_back(mean / 3.0);
  }
  for (std::size_t i = 0; i < centroid.size(); ++i) {
    for (std::size_t j = i + 1; j < centroid.size(); ++j) {
      INFO("speakers " << i << ", " << j << ": " << centroid[i] << " vs " << centroid[j]);
      CHECK(std::abs(centroid[i] - centroid[j]) > 50.0);
    }
  }
  const auto x = synth_source(1, 0, 5, n);
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(0.5));
}

TEST_CASE("manifest resolution and source pool") {
  TempDir dir("manifest");
  const CorpusSpec spec{3, 2, 2, 0.1, 8000};
  const fs::path manifest = synth_corpus(dir.path, spec);
  const auto entries = read_manifest(manifest);
  REQUIRE(entries.size() == 4);
  for (const auto& e : entries) CHECK(fs::exists(e.path));
  CHECK(entries[0].speaker == "spk00");
  CHECK(entries[3].speaker == "spk01");

  std::ofstream(dir.path / "extra.txt") << "# header\n\n  spk01/utt00.wav  \n" << fs::absolute(entries[0].path).string() << "\n";
  const auto extra = read_manifest(dir.path / "extra.txt");
  REQUIRE(extra.size() == 2);
  CHECK(fs::equivalent(extra[0].path, entries[2].path));
  CHECK(extra[1].speaker == "spk00");

  const train::SourcePool pool = load_source_pool(manifest);
  CHECK(pool.signals.size() == 4);
  CHECK(pool.speakers == std::vector<std::size_t>{0, 0, 1, 1});
  CHECK(pool.signals[0].size() == 800);

  // Mixtures built from the manifest reproduce their gains exactly.
  const train::Mixture m = train::mix_sources(pool, {0, 3}, {10, 20}, {0.7, -1.3}, 500);
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(m.mixture[i] == 0.7 * pool.signals[0][10 + i] + -1.3 * pool.signals[3][20 + i]);
  }

  std::ofstream(dir.path / "empty.txt") << "# nothing\n";
  CHECK_THROWS_AS((void)read_manifest(dir.path / "empty.txt"), FormatError);
  write_wav(dir.path / "odd.wav", WavBuffer{16000, std::vector<double>(100, 0.1)});
  std::ofstream(dir.path / "mixed.txt") << "spk00/utt00.wav\nodd.wav\n";
  CHECK_THROWS_AS((void)load_source_pool(dir.path / "mixed.txt"), FormatError);
}

TEST_CASE("checkpoint round-trip is byte-exact") {
  ModelConfig c = preset("tiny");
  c.norm = NormKind::layer;
  const SeparationModel model(c, 21);
  const std::string bytes = serialize_checkpoint(model.config(), model.parameters());
  const Checkpoint ck = parse_checkpoint(bytes);
  CHECK(ck.config == c);
  const SeparationModel loaded = model_from_checkpoint(ck);
  CHECK(serialize_checkpoint(loaded.config(), loaded.parameters()) == bytes);

  TempDir dir("ckpt");
  save_checkpoint(dir.path / "a.ckpt", loaded);
  CHECK(slurp(dir.path / "a.ckpt") == bytes);
  const SeparationModel again = load_model(dir.path / "a.ckpt");
  for (std::size_t i = 0; i < again.parameters().size(); ++i) {
    const auto x = again.parameters()[i].tensor.data(), y = loaded.parameters()[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
  // Values are stored in single precision.
  const auto orig = model.parameters()[3].tensor.data();
  const auto back = loaded.parameters()[3].tensor.data();
  for (std::size_t i = 0; i < orig.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(orig[i])));
}

TEST_CASE("checkpoint corruption is reported as a format error") {
  const SeparationModel model(preset("tiny"), 22);
  const std::string bytes = serialize_checkpoint(model.config(), model.parameters());
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS((void)parse_checkpoint(bad), FormatError);
  CHECK_THROWS_AS((void)parse_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS((void)parse_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS((void)parse_checkpoint(bytes.substr(0, 30)), FormatError);
  std::string version = bytes;
  version.replace(version.find(" 1\n"), 3, " 9\n");
  CHECK_THROWS_AS((void)parse_checkpoint(version), FormatError);
  std::string config = bytes;
  config.replace(config.find("norm = rms"), 10, "norm = xyz");
  CHECK_THROWS_AS((void)parse_checkpoint(config), FormatError);

  // Structurally valid file that does not match the model it describes.
  ParameterList fewer = model.parameters();
  fewer.pop_back();
  CHECK_THROWS_AS((void)model_from_checkpoint(parse_checkpoint(serialize_checkpoint(model.config(), fewer))),
                  FormatError);
  ParameterList renamed = model.parameters();
  renamed.back().name = "decoder.other";
  CHECK_THROWS_AS((void)model_from_checkpoint(parse_checkpoint(serialize_checkpoint(model.config(), renamed))),
                  FormatError);
  ParameterList reshaped = model.parameters();
  reshaped.back().tensor = Tensor::zeros({1, reshaped.back().tensor.numel()});
  CHECK_THROWS_AS((void)model_from_checkpoint(parse_checkpoint(serialize_checkpoint(model.config(), reshaped))),
                  FormatError);
  CHECK_THROWS_AS((void)read_checkpoint("/nonexistent/x.ckpt"), FormatError);
}
