#pragma once

// Synthetic speaker corpus and manifest handling. Each synthetic speaker is a
// harmonic stack with its own pitch range plus band-limited noise centred at a
// speaker-specific frequency, shaped by syllable-like envelopes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpmamba/training.hpp"
#include "dpmamba/wav.hpp"

namespace dpm {

struct ManifestEntry {
  std::filesystem::path path;  ///< absolute, or relative to the manifest's directory as written
  std::string speaker;         ///< name of the file's parent directory
};

/// Fundamental frequency and noise-band centre assigned to a speaker id.
double speaker_f0(std::size_t speaker);
double speaker_noise_center(std::size_t speaker);

/// One utterance; peak-normalized to 0.5. Deterministic in all arguments.
std::vector<double> synth_source(std::size_t speaker, std::size_t utterance, std::uint64_t seed,
                                 std::size_t length, std::uint32_t sample_rate = kDefaultSampleRate);

struct CorpusSpec {
  std::uint64_t seed = 0;
  std::size_t speakers = 4;
  std::size_t utterances = 4;  ///< per speaker
  double seconds = 1.0;
  std::uint32_t sample_rate = kDefaultSampleRate;
};

/// Writes dir/spkNN/uttMM.wav and dir/manifest.txt (relative paths, one per
/// line). Returns the manifest path.
std::filesystem::path synth_corpus(const std::filesystem::path& dir, const CorpusSpec& spec);

/// Blank lines and lines starting with '#' are skipped. Relative paths are
/// resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);

/// Loads every manifest entry; speaker ids are assigned in order of first
/// appearance. All files must share one sample rate.
train::SourcePool load_source_pool(const std::filesystem::path& manifest);

}  // namespace dpm
