#include "dpmamba/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <span>

#include "dpmamba/ops.hpp"

namespace dpm {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty() || value[0] == '-') {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = lower(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + value + "'");
}

Tensor linear(const Tensor& w, const Tensor& x) { return matmul(w, x); }

Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x) { return add_channel_bias(matmul(w, x), b); }

// Solves G X = R in place for symmetric positive definite G [n x n], R [n x m].
void solve_spd(std::vector<double> g, std::vector<double>& r, std::size_t n, std::size_t m) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < n; ++i) {
      if (std::abs(g[i * n + col]) > std::abs(g[piv * n + col])) piv = i;
    }
    for (std::size_t k = 0; k < n; ++k) std::swap(g[col * n + k], g[piv * n + k]);
    for (std::size_t k = 0; k < m; ++k) std::swap(r[col * m + k], r[piv * m + k]);
    const double d = g[col * n + col];
    for (std::size_t i = 0; i < n; ++i) {
      if (i == col) continue;
      const double f = g[i * n + col] / d;
      for (std::size_t k = 0; k < n; ++k) g[i * n + k] -= f * g[col * n + k];
      for (std::size_t k = 0; k < m; ++k) r[i * m + k] -= f * r[col * m + k];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) r[i * m + k] /= g[i * n + i];
  }
}

// Decoder [W x D] that undoes the encoder [D x W]: its pseudo-inverse, scaled by
// stride / W because overlap-add sums W / stride frames at every sample.
std::vector<double> synthesis_weights(std::span<const double> enc, std::size_t D, std::size_t W, std::size_t stride) {
  const bool tall = D >= W;
  const std::size_t n = tall ? W : D;
  std::vector<double> gram(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      if (tall) {
        for (std::size_t d = 0; d < D; ++d) v += enc[d * W + i] * enc[d * W + j];
      } else {
        for (std::size_t w = 0; w < W; ++w) v += enc[i * W + w] * enc[j * W + w];
      }
      gram[i * n + j] = v;
    }
  }
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += gram[i * n + i];
  for (std::size_t i = 0; i < n; ++i) gram[i * n + i] += 1e-9 * trace / static_cast<double>(n);

  std::vector<double> dec(W * D);
  const double s = static_cast<double>(stride) / static_cast<double>(W);
  if (tall) {
    // (E^T E)^-1 E^T
    std::vector<double> rhs(W * D);
    for (std::size_t w = 0; w < W; ++w) {
      for (std::size_t d = 0; d < D; ++d) rhs[w * D + d] = enc[d * W + w];
    }
    solve_spd(gram, rhs, W, D);
    for (std::size_t i = 0; i < W * D; ++i) dec[i] = s * rhs[i];
  } else {
    // E^T (E E^T)^-1, computed as ((E E^T)^-1 E)^T
    std::vector<double> rhs(enc.begin(), enc.end());
    solve_spd(gram, rhs, D, W);
    for (std::size_t w = 0; w < W; ++w) {
      for (std::size_t d = 0; d < D; ++d) dec[w * D + d] = s * rhs[d * W + w];
    }
  }
  return dec;
}

}  // namespace

void ModelConfig::validate() const {
  if (model_dim == 0 || state_dim == 0 || expand == 0 || conv_width == 0 || num_speakers == 0) {
    throw ConfigError("config: dimensions must be positive");
  }
  if (enc_stride == 0 || enc_kernel != 2 * enc_stride) {
    throw ConfigError("config: enc_kernel must equal 2 * enc_stride");
  }
  if (chunk_size < 2 || chunk_size % 2 != 0) throw ConfigError("config: chunk_size must be even and >= 2");
}

MambaConfig ModelConfig::mamba() const {
  MambaConfig m;
  m.model_dim = model_dim;
  m.state_dim = state_dim;
  m.expand = expand;
  m.conv_width = conv_width;
  m.dt_rank = dt_rank;
  m.bidirectional = bidirectional;
  m.discretization = exact_zoh ? ssm::Discretization::exact_zoh : ssm::Discretization::euler;
  m.scan_impl = scan_impl;
  return m;
}

DualPathConfig ModelConfig::dual_path() const { return {mamba(), norm}; }

ModelConfig preset(std::string_view name) {
  const std::string n = lower(name);
  ModelConfig c;
  if (n == "xs") {
    c.model_dim = 128;
    c.num_blocks = 8;
  } else if (n == "s") {
    c.model_dim = 256;
    c.num_blocks = 8;
  } else if (n == "m") {
    c.model_dim = 256;
    c.num_blocks = 16;
  } else if (n == "l") {
    c.model_dim = 512;
    c.num_blocks = 16;
  } else if (n == "tiny") {
    c.model_dim = 32;
    c.num_blocks = 2;
    c.state_dim = 8;
    c.chunk_size = 16;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected xs, s, m, l or tiny)");
  }
  return c;
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "model_dim = " << c.model_dim << '\n'
     << "num_blocks = " << c.num_blocks << '\n'
     << "state_dim = " << c.state_dim << '\n'
     << "chunk_size = " << c.chunk_size << '\n'
     << "enc_kernel = " << c.enc_kernel << '\n'
     << "enc_stride = " << c.enc_stride << '\n'
     << "num_speakers = " << c.num_speakers << '\n'
     << "expand = " << c.expand << '\n'
     << "conv_width = " << c.conv_width << '\n'
     << "dt_rank = " << c.dt_rank << '\n'
     << "norm = " << (c.norm == NormKind::rms ? "rms" : "layer") << '\n'
     << "bidirectional = " << (c.bidirectional ? "true" : "false") << '\n'
     << "exact_zoh = " << (c.exact_zoh ? "true" : "false") << '\n'
     << "encoder_relu = " << (c.encoder_relu ? "true" : "false") << '\n'
     << "scan = " << (c.scan_impl == ssm::ScanImpl::sequential ? "sequential" : "parallel") << '\n';
  return os.str();
}

ModelConfig parse_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    entries.emplace_back(lower(trim(line.substr(0, eq))), trim(line.substr(eq + 1)));
  }

  ModelConfig c;
  for (const auto& [key, value] : entries) {
    if (key == "preset") c = preset(value);
  }
  for (const auto& [key, value] : entries) {
    if (key == "preset") continue;
    if (key == "model_dim") c.model_dim = parse_size(key, value);
    else if (key == "num_blocks") c.num_blocks = parse_size(key, value);
    else if (key == "state_dim") c.state_dim = parse_size(key, value);
    else if (key == "chunk_size") c.chunk_size = parse_size(key, value);
    else if (key == "enc_kernel") c.enc_kernel = parse_size(key, value);
    else if (key == "enc_stride") c.enc_stride = parse_size(key, value);
    else if (key == "num_speakers") c.num_speakers = parse_size(key, value);
    else if (key == "expand") c.expand = parse_size(key, value);
    else if (key == "conv_width") c.conv_width = parse_size(key, value);
    else if (key == "dt_rank") c.dt_rank = parse_size(key, value);
    else if (key == "bidirectional") c.bidirectional = parse_bool(key, value);
    else if (key == "exact_zoh") c.exact_zoh = parse_bool(key, value);
    else if (key == "encoder_relu") c.encoder_relu = parse_bool(key, value);
    else if (key == "norm") {
      const std::string v = lower(value);
      if (v == "rms" || v == "rmsnorm") c.norm = NormKind::rms;
      else if (v == "layer" || v == "layernorm") c.norm = NormKind::layer;
      else throw ConfigError("config: norm must be rms or layer, got '" + value + "'");
    } else if (key == "scan") {
      const std::string v = lower(value);
      if (v == "sequential" || v == "seq") c.scan_impl = ssm::ScanImpl::sequential;
      else if (v == "parallel" || v == "par") c.scan_impl = ssm::ScanImpl::parallel;
      else throw ConfigError("config: scan must be sequential or parallel, got '" + value + "'");
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::size_t count_parameters(const ModelConfig& c) {
  c.validate();
  const std::size_t D = c.model_dim, n = c.num_speakers;
  const std::size_t codec = 2 * c.enc_kernel * D;  // encoder + decoder, no bias
  const std::size_t masknet = 2 * D                // input layer norm
                              + D * D              // in_proj
                              + c.num_blocks * dp_block_parameter_count(c.dual_path()) +
                              1                    // PReLU slope
                              + n * D * D + n * D  // speaker projection
                              + 2 * (D * D + D)    // gated output
                              + D * D;             // mask projection
  return codec + masknet;
}

// ---------------------------------------------------------------------------

SeparationModel::SeparationModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

void SeparationModel::build(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t D = config_.model_dim, W = config_.enc_kernel, n = config_.num_speakers;
  const double d_bound = 1.0 / std::sqrt(static_cast<double>(D));

  encoder_ = uniform_parameter({D, W}, 1.0 / std::sqrt(static_cast<double>(W)), rng);
  auto& m = masknet_;
  m.in_norm = init_norm(D, NormKind::layer);
  m.in_proj = uniform_parameter({D, D}, d_bound, rng);
  const DualPathConfig dp = config_.dual_path();
  for (std::size_t r = 0; r < config_.num_blocks; ++r) m.blocks.push_back(init_dp_block(dp, rng));
  m.prelu_alpha = constant_parameter({1}, 0.25);
  m.speaker_proj = uniform_parameter({n * D, D}, d_bound, rng);
  m.speaker_bias = uniform_parameter({n * D}, d_bound, rng);
  m.out_proj = uniform_parameter({D, D}, d_bound, rng);
  m.out_bias = uniform_parameter({D}, d_bound, rng);
  m.gate_proj = uniform_parameter({D, D}, d_bound, rng);
  m.gate_bias = uniform_parameter({D}, d_bound, rng);
  m.mask_proj = uniform_parameter({D, D}, d_bound, rng);
  decoder_ = Tensor::from({W, D}, synthesis_weights(encoder_.data(), D, W, config_.enc_stride));
  decoder_.set_requires_grad(true);

  params_.clear();
  params_.push_back({"encoder.weight", encoder_});
  params_.push_back({"masknet.in_norm.gain", m.in_norm.gain});
  params_.push_back({"masknet.in_norm.bias", m.in_norm.bias});
  params_.push_back({"masknet.in_proj", m.in_proj});
  for (std::size_t r = 0; r < m.blocks.size(); ++r) {
    append_parameters(m.blocks[r], "masknet.blocks." + std::to_string(r) + ".", params_);
  }
  params_.push_back({"masknet.prelu_alpha", m.prelu_alpha});
  params_.push_back({"masknet.speaker_proj", m.speaker_proj});
  params_.push_back({"masknet.speaker_bias", m.speaker_bias});
  params_.push_back({"masknet.out_proj", m.out_proj});
  params_.push_back({"masknet.out_bias", m.out_bias});
  params_.push_back({"masknet.gate_proj", m.gate_proj});
  params_.push_back({"masknet.gate_bias", m.gate_bias});
  params_.push_back({"masknet.mask_proj", m.mask_proj});
  params_.push_back({"decoder.weight", decoder_});
}

std::size_t SeparationModel::padded_length(std::size_t samples) const {
  const std::size_t W = config_.enc_kernel, st = config_.enc_stride;
  if (samples < W) {
    throw ShapeError("waveform of " + std::to_string(samples) + " samples is shorter than the encoder kernel (" +
                     std::to_string(W) + ")");
  }
  const std::size_t rem = (samples - W) % st;
  return rem == 0 ? samples : samples + (st - rem);
}

std::size_t SeparationModel::frame_count(std::size_t samples) const {
  return (padded_length(samples) - config_.enc_kernel) / config_.enc_stride + 1;
}

Tensor SeparationModel::encode(const Tensor& wave) const {
  if (wave.rank() != 2 || wave.dim(0) != 1) {
    throw ShapeError("encode: expected a [1 x T] waveform, got " + shape_str(wave.shape()));
  }
  const std::size_t T = wave.dim(1);
  if (T == 0) throw ShapeError("encode: empty waveform");
  const std::size_t P = padded_length(T);
  const Tensor padded = P == T ? wave : pad_right(wave, P - T);
  Tensor latent = linear(encoder_, frame(padded, config_.enc_kernel, config_.enc_stride));
  if (config_.encoder_relu) latent = relu(latent);
  return latent;
}

std::vector<Tensor> SeparationModel::masknet(const Tensor& latent) const {
  const std::size_t D = config_.model_dim;
  if (latent.rank() != 2 || latent.dim(0) != D) {
    throw ShapeError("masknet: expected [" + std::to_string(D) + " x N] latent, got " + shape_str(latent.shape()));
  }
  const auto& m = masknet_;
  const DualPathConfig dp = config_.dual_path();

  const Tensor u = linear(m.in_proj, apply_norm(latent, m.in_norm, NormKind::layer));
  ChunkedFeature chunks = chunk(u, config_.chunk_size, config_.chunk_size / 2);
  Tensor h = chunks.data;
  for (const auto& block : m.blocks) h = dp_block(h, block, dp);
  const std::size_t K = h.dim(1), S = h.dim(2);
  h = prelu(h, m.prelu_alpha);
  const Tensor per_speaker = linear(m.speaker_proj, m.speaker_bias, reshape(h, {D, K * S}));

  std::vector<Tensor> masks;
  masks.reserve(config_.num_speakers);
  for (std::size_t i = 0; i < config_.num_speakers; ++i) {
    ChunkedFeature spk = chunks;
    spk.data = reshape(slice_rows(per_speaker, i * D, D), {D, K, S});
    const Tensor o = dechunk(spk);
    const Tensor gated = mul(tanh(linear(m.out_proj, m.out_bias, o)), sigmoid(linear(m.gate_proj, m.gate_bias, o)));
    masks.push_back(relu(linear(m.mask_proj, gated)));
  }
  return masks;
}

Tensor SeparationModel::decode(const Tensor& latent, std::size_t samples) const {
  const Tensor wave = overlap_add_frames(linear(decoder_, latent), config_.enc_stride);
  if (samples > wave.dim(1)) {
    throw ShapeError("decode: " + std::to_string(latent.dim(1)) + " frames cannot cover " +
                     std::to_string(samples) + " samples");
  }
  return crop_right(wave, samples);
}

std::vector<Tensor> SeparationModel::separate(const Tensor& wave) const {
  const Tensor latent = encode(wave);
  const std::vector<Tensor> masks = masknet(latent);
  std::vector<Tensor> sources;
  sources.reserve(masks.size());
  for (const auto& mask : masks) sources.push_back(decode(mul(mask, latent), wave.dim(1)));
  return sources;
}

}  // namespace dpm
