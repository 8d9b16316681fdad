#include "dpmamba/mamba_block.hpp"

#include <cmath>

#include "dpmamba/ops.hpp"

namespace dpm {

namespace {

DirectionWeights init_direction(const MambaConfig& c, Rng& rng) {
  const std::size_t E = c.inner_dim(), H = c.state_dim, W = c.conv_width, r = c.resolved_dt_rank();
  DirectionWeights w;
  const double conv_bound = 1.0 / std::sqrt(static_cast<double>(W));
  w.conv_kernel = uniform_parameter({E, W}, conv_bound, rng);
  w.conv_bias = uniform_parameter({E}, conv_bound, rng);

  const double in_bound = 1.0 / std::sqrt(static_cast<double>(E));
  w.projection.dt_down = uniform_parameter({r, E}, in_bound, rng);
  w.projection.dt_up = uniform_parameter({E, r}, 1.0 / std::sqrt(static_cast<double>(r)), rng);
  w.projection.B_proj = uniform_parameter({H, E}, in_bound, rng);
  w.projection.C_proj = uniform_parameter({H, E}, in_bound, rng);

  // Step sizes start log-uniform in [1e-3, 1e-1]; the bias is their inverse softplus.
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  std::vector<double> bias(E);
  for (double& b : bias) {
    const double dt = std::exp(log_dt(rng));
    b = dt + std::log(-std::expm1(-dt));
  }
  w.projection.dt_bias = Tensor::from({E}, std::move(bias));
  w.projection.dt_bias.set_requires_grad(true);

  // A[e, n] = -(n + 1)
  std::vector<double> a_log(E * H);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t n = 0; n < H; ++n) a_log[e * H + n] = std::log(static_cast<double>(n + 1));
  }
  w.projection.A_log = Tensor::from({E, H}, std::move(a_log));
  w.projection.A_log.set_requires_grad(true);

  w.skip = constant_parameter({E}, 1.0);
  return w;
}

void append_direction(const DirectionWeights& w, const std::string& p, ParameterList& out) {
  out.push_back({p + "conv_kernel", w.conv_kernel});
  out.push_back({p + "conv_bias", w.conv_bias});
  out.push_back({p + "dt_down", w.projection.dt_down});
  out.push_back({p + "dt_up", w.projection.dt_up});
  out.push_back({p + "dt_bias", w.projection.dt_bias});
  out.push_back({p + "B_proj", w.projection.B_proj});
  out.push_back({p + "C_proj", w.projection.C_proj});
  out.push_back({p + "A_log", w.projection.A_log});
  out.push_back({p + "skip", w.skip});
}

void check_input(const Tensor& h, const BiMambaWeights& w) {
  if (h.rank() != 2 || h.dim(0) != w.in_proj.dim(1)) {
    throw ShapeError("bimamba: input " + shape_str(h.shape()) + " does not match model dim of in_proj " +
                     shape_str(w.in_proj.shape()));
  }
}

}  // namespace

BiMambaWeights init_bimamba(const MambaConfig& c, Rng& rng) {
  const std::size_t D = c.model_dim, E = c.inner_dim();
  BiMambaWeights w;
  const double d_bound = 1.0 / std::sqrt(static_cast<double>(D));
  w.in_proj = uniform_parameter({E, D}, d_bound, rng);
  w.gate_proj = uniform_parameter({E, D}, d_bound, rng);
  w.out_proj = uniform_parameter({D, E}, 1.0 / std::sqrt(static_cast<double>(E)), rng);
  w.forward = init_direction(c, rng);
  if (c.bidirectional) w.backward = init_direction(c, rng);
  return w;
}

void append_parameters(const BiMambaWeights& w, const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + "in_proj", w.in_proj});
  out.push_back({prefix + "gate_proj", w.gate_proj});
  append_direction(w.forward, prefix + "fwd.", out);
  if (w.backward.conv_kernel.defined()) append_direction(w.backward, prefix + "bwd.", out);
  out.push_back({prefix + "out_proj", w.out_proj});
}

std::size_t bimamba_parameter_count(const MambaConfig& c) {
  const std::size_t D = c.model_dim, E = c.inner_dim(), H = c.state_dim, W = c.conv_width,
                    r = c.resolved_dt_rank();
  const std::size_t direction = E * W + E             // conv
                                + r * E + E * r + E   // low-rank delta path + bias
                                + 2 * H * E           // B, C projections
                                + E * H               // A
                                + E;                  // skip
  return 3 * E * D + (c.bidirectional ? 2 : 1) * direction;
}

Tensor direction_forward(const Tensor& u, const DirectionWeights& w, const MambaConfig& c,
                         std::size_t segment) {
  const Tensor x = silu(conv1d_depthwise(u, w.conv_kernel, w.conv_bias, segment));
  const ssm::SsmParams params = ssm::selective_parameterize(x, w.projection);
  return ssm::selective_scan(x, params, w.skip, {c.discretization, c.scan_impl, segment});
}

Tensor bimamba_forward(const Tensor& h, const BiMambaWeights& w, const MambaConfig& c,
                       std::size_t segment) {
  check_input(h, w);
  if (!w.backward.conv_kernel.defined()) {
    throw std::invalid_argument("bimamba_forward: weights have no backward branch");
  }
  const Tensor h_fwd = matmul(w.in_proj, h);
  const Tensor gate = sigmoid(matmul(w.gate_proj, h));
  const Tensor y_fwd = mul(gate, direction_forward(h_fwd, w.forward, c, segment));

  const Tensor h_bwd = flip_last_axis(h_fwd, segment);
  const Tensor y_bwd =
      mul(flip_last_axis(gate, segment), direction_forward(h_bwd, w.backward, c, segment));
  return matmul(w.out_proj, mean_pair(y_fwd, flip_last_axis(y_bwd, segment)));
}

Tensor mamba_unidirectional(const Tensor& h, const BiMambaWeights& w, const MambaConfig& c,
                            std::size_t segment) {
  check_input(h, w);
  const Tensor gate = sigmoid(matmul(w.gate_proj, h));
  const Tensor y = mul(gate, direction_forward(matmul(w.in_proj, h), w.forward, c, segment));
  return matmul(w.out_proj, y);
}

Tensor mamba_forward(const Tensor& h, const BiMambaWeights& w, const MambaConfig& c,
                     std::size_t segment) {
  return c.bidirectional ? bimamba_forward(h, w, c, segment) : mamba_unidirectional(h, w, c, segment);
}

}  // namespace dpm
