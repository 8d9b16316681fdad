#include "dpmamba/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace dpm {

namespace {

constexpr std::string_view kMagic = "DPMAMBA-CHECKPOINT";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_f32(std::string& out, float v) {
  auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

// Reads one '\n'-terminated line starting at `pos`.
std::string_view next_line(std::string_view bytes, std::size_t& pos) {
  const auto end = bytes.find('\n', pos);
  if (end == std::string_view::npos) throw FormatError("checkpoint: truncated header");
  auto line = bytes.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

}  // namespace

std::string serialize_checkpoint(const ModelConfig& config, const ParameterList& params) {
  std::ostringstream head;
  head << kMagic << ' ' << kCheckpointVersion << '\n';
  head << "[config]\n" << to_text(config);
  head << "[parameters] " << params.size() << '\n';
  std::size_t offset = 0;
  std::unordered_set<std::string> seen;
  for (const auto& p : params) {
    if (p.name.empty() || p.name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid parameter name '" + p.name + "'");
    }
    if (!seen.insert(p.name).second) throw std::invalid_argument("checkpoint: duplicate parameter " + p.name);
    head << p.name << ' ' << p.tensor.rank();
    for (auto d : p.tensor.shape()) head << ' ' << d;
    head << ' ' << offset << '\n';
    offset += 4 * p.tensor.numel();
  }
  head << "[data] " << offset << '\n';

  std::string out = head.str();
  out.reserve(out.size() + offset);
  for (const auto& p : params) {
    for (double v : p.tensor.data()) put_f32(out, static_cast<float>(v));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  {
    std::istringstream first{std::string(next_line(bytes, pos))};
    std::string magic;
    int version = 0;
    if (!(first >> magic >> version) || magic != kMagic) throw FormatError("checkpoint: bad magic line");
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
  }
  if (next_line(bytes, pos) != "[config]") throw FormatError("checkpoint: missing [config] section");

  std::string config_text;
  std::string_view line;
  while (!(line = next_line(bytes, pos)).starts_with("[parameters]")) {
    config_text.append(line).push_back('\n');
  }
  Checkpoint ck;
  try {
    ck.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  std::size_t count = 0;
  {
    std::istringstream in{std::string(line.substr(12))};
    if (!(in >> count)) throw FormatError("checkpoint: bad [parameters] count");
  }
  struct Record {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Record> records;
  std::unordered_set<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream in{std::string(next_line(bytes, pos))};
    Record r;
    std::size_t rank = 0;
    if (!(in >> r.name >> rank) || rank > 8) throw FormatError("checkpoint: bad parameter record");
    r.shape.resize(rank);
    for (auto& d : r.shape) {
      if (!(in >> d)) throw FormatError("checkpoint: bad shape for " + r.name);
    }
    if (!(in >> r.offset)) throw FormatError("checkpoint: missing offset for " + r.name);
    if (!names.insert(r.name).second) throw FormatError("checkpoint: duplicate parameter " + r.name);
    records.push_back(std::move(r));
  }

  line = next_line(bytes, pos);
  std::size_t data_bytes = 0;
  {
    if (!line.starts_with("[data]")) throw FormatError("checkpoint: missing [data] section");
    std::istringstream in{std::string(line.substr(6))};
    if (!(in >> data_bytes)) throw FormatError("checkpoint: bad [data] size");
  }
  if (bytes.size() - pos != data_bytes) {
    throw FormatError("checkpoint: payload is " + std::to_string(bytes.size() - pos) + " bytes, header says " +
                      std::to_string(data_bytes));
  }
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  std::size_t expected_offset = 0;
  for (const auto& r : records) {
    const std::size_t n = shape_numel(r.shape);
    if (r.offset != expected_offset || r.offset + 4 * n > data_bytes) {
      throw FormatError("checkpoint: inconsistent offset for " + r.name);
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_f32(payload + r.offset + 4 * i);
    ck.parameters.push_back({r.name, Tensor::from(r.shape, std::move(values))});
    expected_offset += 4 * n;
  }
  if (expected_offset != data_bytes) throw FormatError("checkpoint: trailing payload bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const SeparationModel& model) {
  const std::string bytes = serialize_checkpoint(model.config(), model.parameters());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

SeparationModel model_from_checkpoint(const Checkpoint& checkpoint) {
  SeparationModel model(checkpoint.config, 0);
  std::unordered_map<std::string, const Tensor*> stored;
  for (const auto& p : checkpoint.parameters) stored.emplace(p.name, &p.tensor);
  if (stored.size() != model.parameters().size()) {
    throw FormatError("checkpoint: holds " + std::to_string(stored.size()) + " parameters, model expects " +
                      std::to_string(model.parameters().size()));
  }
  for (auto& p : model.parameters()) {
    const auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError("checkpoint: missing parameter " + p.name);
    if (it->second->shape() != p.tensor.shape()) {
      throw FormatError("checkpoint: " + p.name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                        shape_str(p.tensor.shape()));
    }
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  return model;
}

SeparationModel load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

}  // namespace dpm
