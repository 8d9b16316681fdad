#pragma once

// RIFF/WAVE reader and writer for 16-bit PCM mono audio.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dpmamba/io_error.hpp"

namespace dpm {

inline constexpr std::uint32_t kDefaultSampleRate = 8000;

struct WavBuffer {
  std::uint32_t sample_rate = kDefaultSampleRate;
  std::vector<double> samples;  ///< nominally in [-1, 1]
};

/// Sample x is stored as round(x * 32768) clamped to [-32768, 32767] and
/// read back as q / 32768, so the round-trip error is at most 1/32768 on [-1, 1).
std::string encode_wav(const WavBuffer& wav);
/// Throws FormatError for malformed data and UnsupportedFormat for valid
/// files that are not 16-bit PCM mono.
WavBuffer decode_wav(std::string_view bytes);

WavBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WavBuffer& wav);

}  // namespace dpm
