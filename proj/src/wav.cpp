#include "dpmamba/wav.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dpm {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u(std::string_view b, std::size_t pos, int width) {
  if (pos + static_cast<std::size_t>(width) > b.size()) throw FormatError("wav: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
  return v;
}

std::int16_t quantize(double x) {
  const double q = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

}  // namespace

std::string encode_wav(const WavBuffer& wav) {
  if (wav.sample_rate == 0) throw std::invalid_argument("wav: sample rate must be positive");
  const std::size_t data_bytes = 2 * wav.samples.size();
  if (data_bytes > 0xffffffffu - 36) throw std::invalid_argument("wav: too many samples for RIFF");
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, static_cast<std::uint32_t>(36 + data_bytes));
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, wav.sample_rate);
  put_u32(out, wav.sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, static_cast<std::uint32_t>(data_bytes));
  for (double x : wav.samples) {
    if (!std::isfinite(x)) throw std::invalid_argument("wav: non-finite sample");
    put_u16(out, static_cast<std::uint16_t>(quantize(x)));
  }
  return out;
}

WavBuffer decode_wav(std::string_view b) {
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
    throw FormatError("wav: not a RIFF/WAVE file");
  }
  WavBuffer wav;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const auto id = b.substr(pos, 4);
    const std::size_t size = get_u(b, pos + 4, 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16) throw FormatError("wav: short fmt chunk");
      const auto format = get_u(b, body, 2);
      const auto channels = get_u(b, body + 2, 2);
      wav.sample_rate = get_u(b, body + 4, 4);
      const auto bits = get_u(b, body + 14, 2);
      if (format != 1 && format != 0xfffe) {
        throw UnsupportedFormat("wav: only PCM is supported (format tag " + std::to_string(format) + ")");
      }
      if (channels != 1) throw UnsupportedFormat("wav: only mono is supported, file has " + std::to_string(channels) + " channels");
      if (bits != 16) throw UnsupportedFormat("wav: only 16-bit samples are supported, file has " + std::to_string(bits));
      if (wav.sample_rate == 0) throw FormatError("wav: zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (body + size > b.size()) throw FormatError("wav: truncated data chunk");
      if (size % 2 != 0) throw FormatError("wav: odd data chunk size");
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto q = static_cast<std::int16_t>(get_u(b, body + 2 * i, 2));
        wav.samples[i] = q / 32768.0;
      }
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(have_fmt ? "wav: missing data chunk" : "wav: missing fmt chunk");
}

WavBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_wav(ss.str());
  } catch (const UnsupportedFormat& e) {
    throw UnsupportedFormat(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const WavBuffer& wav) {
  const std::string bytes = encode_wav(wav);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace dpm
