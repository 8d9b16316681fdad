#include "dpmamba/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "dpmamba/parameters.hpp"

namespace dpm {

double speaker_f0(std::size_t speaker) { return 95.0 + 40.0 * static_cast<double>(speaker % 8); }

double speaker_noise_center(std::size_t speaker) { return 450.0 + 420.0 * static_cast<double>(speaker % 8); }

std::vector<double> synth_source(std::size_t speaker, std::size_t utterance, std::uint64_t seed,
                                 std::size_t length, std::uint32_t sample_rate) {
  if (sample_rate == 0) throw std::invalid_argument("synth_source: sample rate must be positive");
  // Mix the ids into the seed so each utterance has its own stream.
  Rng rng(seed * 0x9E3779B97F4A7C15ull + speaker * 1000003ull + utterance * 7919ull + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double fs = sample_rate;
  const double two_pi = 2.0 * std::numbers::pi;

  const double f0 = speaker_f0(speaker) * (0.95 + 0.1 * unit(rng));
  const double vibrato_rate = 3.0 + 3.0 * unit(rng);
  const double vibrato_depth = 0.02 * f0;
  const double tilt = 0.55 + 0.2 * unit(rng);  // per-harmonic amplitude decay

  // Resonant two-pole band-pass around the speaker's noise centre.
  const double fc = speaker_noise_center(speaker);
  const double r = std::exp(-std::numbers::pi * (0.15 * fc) / fs);
  const double a1 = 2.0 * r * std::cos(two_pi * fc / fs);
  const double a2 = -r * r;
  const double noise_gain = 0.25;

  // Syllable envelope: raised-cosine bumps with random durations and gaps.
  std::vector<double> env(length, 0.0);
  for (std::size_t t = 0; t < length;) {
    const auto dur = static_cast<std::size_t>(fs * (0.08 + 0.14 * unit(rng)));
    const auto gap = static_cast<std::size_t>(fs * (0.01 + 0.05 * unit(rng)));
    const double amp = 0.6 + 0.4 * unit(rng);
    for (std::size_t k = 0; k < dur && t + k < length; ++k) {
      env[t + k] = amp * 0.5 * (1.0 - std::cos(two_pi * static_cast<double>(k) / static_cast<double>(dur)));
    }
    t += dur + gap;
  }

  std::vector<double> voiced(length), noise(length);
  double phase = two_pi * unit(rng);
  double y1 = 0.0, y2 = 0.0;
  double voiced_energy = 0.0, noise_energy = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double time = static_cast<double>(t) / fs;
    const double f = f0 + vibrato_depth * std::sin(two_pi * vibrato_rate * time);
    phase += two_pi * f / fs;
    double v = 0.0, amp = 1.0;
    for (int h = 1; h <= 8 && h * f < 0.45 * fs; ++h, amp *= tilt) v += amp * std::sin(h * phase);
    const double y = gauss(rng) + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    voiced[t] = v;
    noise[t] = y;
    voiced_energy += v * v;
    noise_energy += y * y;
  }
  const double mix = noise_energy > 0.0 ? noise_gain * std::sqrt(voiced_energy / noise_energy) : 0.0;
  std::vector<double> out(length);
  for (std::size_t t = 0; t < length; ++t) out[t] = env[t] * (voiced[t] + mix * noise[t]);
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : out) v *= 0.5 / peak;
  }
  return out;
}

std::filesystem::path synth_corpus(const std::filesystem::path& dir, const CorpusSpec& spec) {
  if (spec.speakers == 0 || spec.utterances == 0 || spec.seconds <= 0.0) {
    throw std::invalid_argument("synth_corpus: need at least one speaker, one utterance and a positive duration");
  }
  const auto length = static_cast<std::size_t>(std::llround(spec.seconds * spec.sample_rate));
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  std::ofstream m(manifest);
  if (!m) throw std::runtime_error("cannot write " + manifest.string());
  char name[32];
  for (std::size_t s = 0; s < spec.speakers; ++s) {
    std::snprintf(name, sizeof name, "spk%02zu", s);
    const std::string spk = name;
    std::filesystem::create_directories(dir / spk);
    for (std::size_t u = 0; u < spec.utterances; ++u) {
      std::snprintf(name, sizeof name, "utt%02zu.wav", u);
      const auto rel = std::filesystem::path(spk) / name;
      write_wav(dir / rel, {spec.sample_rate, synth_source(s, u, spec.seed, length, spec.sample_rate)});
      m << rel.generic_string() << '\n';
    }
  }
  return manifest;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::filesystem::path p = line.substr(first);
    if (p.is_relative()) p = base / p;
    entries.push_back({p, p.parent_path().filename().string()});
  }
  if (entries.empty()) throw FormatError("manifest " + manifest.string() + " lists no files");
  return entries;
}

train::SourcePool load_source_pool(const std::filesystem::path& manifest) {
  train::SourcePool pool;
  std::map<std::string, std::size_t> ids;
  bool first = true;
  for (const auto& e : read_manifest(manifest)) {
    WavBuffer w = read_wav(e.path);
    if (first) {
      pool.sample_rate = w.sample_rate;
      first = false;
    } else if (w.sample_rate != pool.sample_rate) {
      throw FormatError(e.path.string() + ": sample rate " + std::to_string(w.sample_rate) + " differs from " +
                        std::to_string(pool.sample_rate) + " (resampling is not supported)");
    }
    const auto [it, inserted] = ids.emplace(e.speaker, ids.size());
    pool.speakers.push_back(it->second);
    pool.signals.push_back(std::move(w.samples));
  }
  return pool;
}

}  // namespace dpm
