#pragma once

// Chunking, overlap-add and the dual-path (intra-chunk then inter-chunk) block.

#include <cstddef>
#include <string>

#include "dpmamba/mamba_block.hpp"

namespace dpm {

enum class NormKind { rms, layer };

/// Rank-3 chunked view [D x K x S] of a [D x N] feature.
struct ChunkedFeature {
  Tensor data;
  std::size_t original_length = 0;  ///< N
  std::size_t chunk_size = 0;       ///< K
  std::size_t hop = 0;              ///< K / 2
  std::size_t padded_length = 0;    ///< (S - 1) * hop + K >= N

  std::size_t num_chunks() const { return data.dim(2); }
};

/// Number of chunks for N frames: 1 when N <= K, else ceil((N - K) / hop) + 1.
std::size_t chunk_count(std::size_t frames, std::size_t chunk_size, std::size_t hop);

/// Zero-pads h[D x N] on the right and windows it into overlapping chunks:
/// data[d, k, s] = padded[d, s * hop + k].
ChunkedFeature chunk(const Tensor& h, std::size_t chunk_size, std::size_t hop);

/// Overlap-add of c.data back to [D x N]; every frame is divided by the number
/// of chunks covering it, padding is dropped.
Tensor dechunk(const ChunkedFeature& c);

struct NormWeights {
  Tensor gain;
  Tensor bias;  ///< layer norm only
};

NormWeights init_norm(std::size_t dim, NormKind kind);
/// Normalizes over axis 0 of x[D x M] (each column independently).
Tensor apply_norm(const Tensor& x, const NormWeights& w, NormKind kind, double eps = 1e-8);

struct DualPathConfig {
  MambaConfig mamba;
  NormKind norm = NormKind::rms;
};

struct DpBlockWeights {
  NormWeights intra_norm;
  BiMambaWeights intra;
  NormWeights inter_norm;
  BiMambaWeights inter;
};

DpBlockWeights init_dp_block(const DualPathConfig& config, Rng& rng);
void append_parameters(const DpBlockWeights& w, const std::string& prefix, ParameterList& out);
std::size_t dp_block_parameter_count(const DualPathConfig& config);

/// h' = h + Mamba_K(Norm(h)) along each chunk, then
/// out = h' + Mamba_S(Norm(h')) across chunks at every intra-chunk position.
Tensor dp_block(const Tensor& h, const DpBlockWeights& w, const DualPathConfig& config);

}  // namespace dpm
