#pragma once

// Bidirectional Mamba unit: shared input/gate/output projections around a
// forward and a time-reversed selective-SSM branch.

#include <cstddef>
#include <string>

#include "dpmamba/parameters.hpp"
#include "dpmamba/ssm.hpp"

namespace dpm {

struct MambaConfig {
  std::size_t model_dim = 0;   ///< D
  std::size_t state_dim = 16;  ///< H
  std::size_t expand = 2;      ///< E = expand * D
  std::size_t conv_width = 4;
  std::size_t dt_rank = 0;  ///< 0 selects ceil(D / 16)
  bool bidirectional = true;
  ssm::Discretization discretization = ssm::Discretization::euler;
  ssm::ScanImpl scan_impl = ssm::ScanImpl::sequential;

  std::size_t inner_dim() const { return expand * model_dim; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (model_dim + 15) / 16; }
};

/// Conv + selective SSM stack of one scan direction.
struct DirectionWeights {
  Tensor conv_kernel;  ///< [E x W]
  Tensor conv_bias;    ///< [E]
  ssm::SelectiveProjection projection;
  Tensor skip;  ///< [E]
};

struct BiMambaWeights {
  Tensor in_proj;    ///< [E x D]
  Tensor gate_proj;  ///< [E x D]
  Tensor out_proj;   ///< [D x E]
  DirectionWeights forward;
  DirectionWeights backward;  ///< undefined tensors when unidirectional
};

BiMambaWeights init_bimamba(const MambaConfig& config, Rng& rng);
void append_parameters(const BiMambaWeights& w, const std::string& prefix, ParameterList& out);
std::size_t bimamba_parameter_count(const MambaConfig& config);

/// One direction: selective_scan(SiLU(conv(u)), ...) on u[E x L].
Tensor direction_forward(const Tensor& u, const DirectionWeights& w, const MambaConfig& config,
                         std::size_t segment = 0);

/// h[D x L] -> [D x L]. With `segment` > 0 the time axis packs independent
/// sequences of that length (flips and scans restart at each boundary).
///
/// out = W_out ((sig(z) * y_f + flip(flip(sig(z)) * y_b)) / 2), where
/// y_f runs on W_in h and y_b on flip(W_in h). The backward branch is gated
/// in its own (reversed) time order so both gates line up with the same
/// positions of h.
Tensor bimamba_forward(const Tensor& h, const BiMambaWeights& w, const MambaConfig& config,
                       std::size_t segment = 0);

/// Forward branch only: W_out (sig(z) * y_f).
Tensor mamba_unidirectional(const Tensor& h, const BiMambaWeights& w, const MambaConfig& config,
                            std::size_t segment = 0);

/// Dispatches on config.bidirectional.
Tensor mamba_forward(const Tensor& h, const BiMambaWeights& w, const MambaConfig& config,
                     std::size_t segment = 0);

}  // namespace dpm
