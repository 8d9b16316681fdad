#pragma once

// Checkpoint layout:
//
//   DPMAMBA-CHECKPOINT 1
//   [config]
//   model_dim = 256
//   ...
//   [parameters] <count>
//   <name> <rank> <dim0> ... <dimN> <byte offset>
//   ...
//   [data] <byte count>
//   <raw little-endian float32 payload>
//
// Values are stored as float32; loading widens them to double, so
// save -> load -> save reproduces the file byte for byte.

#include <filesystem>
#include <string>
#include <string_view>

#include "dpmamba/io_error.hpp"
#include "dpmamba/model.hpp"

namespace dpm {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParameterList parameters;  ///< detached copies, in file order
};

std::string serialize_checkpoint(const ModelConfig& config, const ParameterList& params);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const SeparationModel& model);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Builds a model from the stored config and copies every stored tensor into
/// it. Missing, extra or mis-shaped parameters raise FormatError.
SeparationModel load_model(const std::filesystem::path& path);
SeparationModel model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace dpm
