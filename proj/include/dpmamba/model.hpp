#pragma once

// End-to-end separation network: linear encoder, dual-path Mamba mask
// estimator, masking and linear decoder.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dpmamba/dual_path.hpp"

namespace dpm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t model_dim = 256;   ///< D, encoder dimension
  std::size_t num_blocks = 8;    ///< R dual-path blocks
  std::size_t state_dim = 16;    ///< H
  std::size_t chunk_size = 250;  ///< K, hop K/2
  std::size_t enc_kernel = 16;
  std::size_t enc_stride = 8;
  std::size_t num_speakers = 2;
  std::size_t expand = 2;  ///< E = expand * D
  std::size_t conv_width = 4;
  std::size_t dt_rank = 0;  ///< 0 selects ceil(D / 16)
  NormKind norm = NormKind::rms;
  bool bidirectional = true;
  bool exact_zoh = false;
  bool encoder_relu = false;
  ssm::ScanImpl scan_impl = ssm::ScanImpl::sequential;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  MambaConfig mamba() const;
  DualPathConfig dual_path() const;

  bool operator==(const ModelConfig&) const = default;
};

/// "xs", "s", "m", "l" (case-insensitive) plus "tiny" for desk-scale training.
ModelConfig preset(std::string_view name);

/// Flat `key = value` text, one field per line.
std::string to_text(const ModelConfig& config);
/// Parses `key = value` lines; `#` starts a comment. A `preset` key, if
/// present, seeds the defaults before the other keys are applied.
ModelConfig parse_config(std::string_view text);
ModelConfig load_config(const std::filesystem::path& path);

/// Exact trainable-parameter count, computed from the configuration alone.
std::size_t count_parameters(const ModelConfig& config);

struct MaskNetWeights {
  NormWeights in_norm;  ///< layer norm over D
  Tensor in_proj;       ///< [D x D]
  std::vector<DpBlockWeights> blocks;
  Tensor prelu_alpha;  ///< [1]
  Tensor speaker_proj;  ///< [n*D x D]
  Tensor speaker_bias;  ///< [n*D]
  Tensor out_proj;      ///< [D x D]
  Tensor out_bias;      ///< [D]
  Tensor gate_proj;     ///< [D x D]
  Tensor gate_bias;     ///< [D]
  Tensor mask_proj;     ///< [D x D]
};

class SeparationModel {
 public:
  explicit SeparationModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  const ParameterList& parameters() const { return params_; }
  ParameterList& parameters() { return params_; }
  std::size_t parameter_count() const { return total_size(params_); }

  Tensor& encoder_weight() { return encoder_; }
  Tensor& decoder_weight() { return decoder_; }
  MaskNetWeights& masknet_weights() { return masknet_; }

  /// Samples after right zero-padding T so that (T - kernel) % stride == 0.
  std::size_t padded_length(std::size_t samples) const;
  std::size_t frame_count(std::size_t samples) const;

  /// wave[1 x T] -> latent [D x N], N = (padded T - kernel) / stride + 1.
  Tensor encode(const Tensor& wave) const;
  /// latent [D x N] -> nonnegative masks, one [D x N] per speaker.
  std::vector<Tensor> masknet(const Tensor& latent) const;
  /// latent [D x N] -> wave [1 x samples] by transposed framing and overlap-add.
  Tensor decode(const Tensor& latent, std::size_t samples) const;
  /// Estimated sources, each [1 x T].
  std::vector<Tensor> separate(const Tensor& wave) const;

 private:
  void build(std::uint64_t seed);

  ModelConfig config_;
  Tensor encoder_;  ///< [D x kernel]
  MaskNetWeights masknet_;
  Tensor decoder_;  ///< [kernel x D]
  ParameterList params_;
};

}  // namespace dpm
