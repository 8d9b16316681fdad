#include "dpmamba/dual_path.hpp"

#include "dpmamba/autograd.hpp"
#include "dpmamba/ops.hpp"

namespace dpm {

using autograd::grad_sink;

std::size_t chunk_count(std::size_t frames, std::size_t chunk_size, std::size_t hop) {
  if (frames <= chunk_size) return 1;
  return (frames - chunk_size + hop - 1) / hop + 1;
}

ChunkedFeature chunk(const Tensor& h, std::size_t K, std::size_t hop) {
  autograd::require_rank("chunk", h, 2);
  if (K == 0 || K % 2 != 0) throw std::invalid_argument("chunk: chunk size must be even and positive");
  if (hop != K / 2) throw std::invalid_argument("chunk: hop must be half the chunk size");
  const std::size_t D = h.dim(0), N = h.dim(1);
  if (N == 0) throw ShapeError("chunk: empty feature sequence");
  const std::size_t S = chunk_count(N, K, hop);

  ChunkedFeature c;
  c.original_length = N;
  c.chunk_size = K;
  c.hop = hop;
  c.padded_length = (S - 1) * hop + K;

  const auto in = h.data();
  std::vector<double> out(D * K * S, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t src = s * hop + k;
        if (src < N) out[(d * K + k) * S + s] = in[d * N + src];
      }
    }
  }
  c.data = autograd::make_result("chunk", {D, K, S}, std::move(out), {h},
                                 [h, D, N, K, S, hop](std::span<const double> g, std::span<const double>) {
                                   auto gh = grad_sink(h);
                                   if (gh.empty()) return;
                                   for (std::size_t d = 0; d < D; ++d) {
                                     for (std::size_t k = 0; k < K; ++k) {
                                       for (std::size_t s = 0; s < S; ++s) {
                                         const std::size_t src = s * hop + k;
                                         if (src < N) gh[d * N + src] += g[(d * K + k) * S + s];
                                       }
                                     }
                                   }
                                 });
  return c;
}

Tensor dechunk(const ChunkedFeature& c) {
  const Tensor& x = c.data;
  autograd::require_rank("dechunk", x, 3);
  const std::size_t D = x.dim(0), K = x.dim(1), S = x.dim(2), hop = c.hop, N = c.original_length;
  if (K != c.chunk_size || hop == 0 || c.padded_length != (S - 1) * hop + K || N > c.padded_length ||
      N == 0 || chunk_count(N, K, hop) != S) {
    throw std::invalid_argument("dechunk: recorded lengths are inconsistent with data " + shape_str(x.shape()));
  }
  const std::size_t P = c.padded_length;
  std::vector<double> coverage(P, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t k = 0; k < K; ++k) coverage[s * hop + k] += 1.0;
  }
  const auto in = x.data();
  std::vector<double> sum(D * P, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t s = 0; s < S; ++s) sum[d * P + s * hop + k] += in[(d * K + k) * S + s];
    }
  }
  std::vector<double> out(D * N);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t n = 0; n < N; ++n) out[d * N + n] = sum[d * P + n] / coverage[n];
  }
  return autograd::make_result(
      "dechunk", {D, N}, std::move(out), {x},
      [x, D, K, S, N, hop, cov = std::move(coverage)](std::span<const double> g, std::span<const double>) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        for (std::size_t d = 0; d < D; ++d) {
          for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t n = s * hop + k;
              if (n < N) gx[(d * K + k) * S + s] += g[d * N + n] / cov[n];
            }
          }
        }
      });
}

NormWeights init_norm(std::size_t dim, NormKind kind) {
  NormWeights w;
  w.gain = constant_parameter({dim}, 1.0);
  if (kind == NormKind::layer) w.bias = constant_parameter({dim}, 0.0);
  return w;
}

Tensor apply_norm(const Tensor& x, const NormWeights& w, NormKind kind, double eps) {
  return kind == NormKind::rms ? rms_norm(x, w.gain, eps) : layer_norm(x, w.gain, w.bias, eps);
}

namespace {

void append_norm(const NormWeights& w, const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + "gain", w.gain});
  if (w.bias.defined()) out.push_back({prefix + "bias", w.bias});
}

}  // namespace

DpBlockWeights init_dp_block(const DualPathConfig& c, Rng& rng) {
  DpBlockWeights w;
  w.intra_norm = init_norm(c.mamba.model_dim, c.norm);
  w.intra = init_bimamba(c.mamba, rng);
  w.inter_norm = init_norm(c.mamba.model_dim, c.norm);
  w.inter = init_bimamba(c.mamba, rng);
  return w;
}

void append_parameters(const DpBlockWeights& w, const std::string& prefix, ParameterList& out) {
  append_norm(w.intra_norm, prefix + "intra.norm.", out);
  append_parameters(w.intra, prefix + "intra.mamba.", out);
  append_norm(w.inter_norm, prefix + "inter.norm.", out);
  append_parameters(w.inter, prefix + "inter.mamba.", out);
}

std::size_t dp_block_parameter_count(const DualPathConfig& c) {
  const std::size_t norm = (c.norm == NormKind::layer ? 2 : 1) * c.mamba.model_dim;
  return 2 * (norm + bimamba_parameter_count(c.mamba));
}

Tensor dp_block(const Tensor& h, const DpBlockWeights& w, const DualPathConfig& c) {
  autograd::require_rank("dp_block", h, 3);
  const std::size_t D = h.dim(0), K = h.dim(1), S = h.dim(2);
  if (D != c.mamba.model_dim) {
    throw ShapeError("dp_block: feature " + shape_str(h.shape()) + " does not match model dim " +
                     std::to_string(c.mamba.model_dim));
  }
  // Intra-chunk: columns grouped by chunk, K frames per sequence.
  Tensor u = reshape(permute(h, {0, 2, 1}), {D, S * K});
  u = add(u, mamba_forward(apply_norm(u, w.intra_norm, c.norm), w.intra, c.mamba, K));
  const Tensor mid = permute(reshape(u, {D, S, K}), {0, 2, 1});

  // Inter-chunk: columns grouped by intra-chunk position, S chunks per sequence.
  Tensor v = reshape(mid, {D, K * S});
  v = add(v, mamba_forward(apply_norm(v, w.inter_norm, c.norm), w.inter, c.mamba, S));
  return reshape(v, {D, K, S});
}

}  // namespace dpm
