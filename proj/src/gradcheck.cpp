#include "dpmamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dpmamba/dual_path.hpp"
#include "dpmamba/mamba_block.hpp"
#include "dpmamba/model.hpp"
#include "dpmamba/ops.hpp"
#include "dpmamba/training.hpp"

namespace dpm::check {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult gradcheck(std::string name, const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          double tolerance, double step) {
  GradcheckResult r;
  r.name = std::move(name);
  r.tolerance = tolerance;

  std::vector<Tensor> leaves = inputs;
  for (auto& t : leaves) {
    if (!t.is_leaf() || !t.requires_grad()) throw std::invalid_argument("gradcheck: inputs must be trainable leaves");
    t.zero_grad();
  }
  const Tensor out = loss();
  out.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : leaves) {
    analytic.emplace_back(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
  }
  const double f0 = out.item();

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto values = leaves[i].mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + step;
      const double fp = loss().item();
      values[k] = saved - step;
      const double fm = loss().item();
      values[k] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = relative_error(analytic[i][k], numeric);
      if (err > tolerance) {
        // A smooth function keeps the second difference at O(step^2); a kink
        // crossed inside the stencil leaves an O(step) residue.
        const double second = std::abs(fp + fm - 2.0 * f0);
        if (second > 1e-7 * std::max(1.0, std::abs(f0))) {
          ++r.skipped_kinks;
          continue;
        }
      }
      r.max_rel_error = std::max(r.max_rel_error, err);
      ++r.checked;
    }
  }
  for (auto& t : leaves) t.zero_grad();
  r.passed = r.max_rel_error < tolerance && r.checked > 0;
  return r;
}

namespace {

struct Maker {
  Rng rng;
  explicit Maker(std::uint64_t seed) : rng(seed) {}

  Tensor uniform(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return Tensor::from(std::move(shape), std::move(v));
  }
  Tensor leaf(Shape shape, double lo = -2.0, double hi = 2.0) {
    return uniform(std::move(shape), lo, hi).set_requires_grad(true);
  }
  /// Fixed random weighting so every output entry reaches the loss.
  Tensor probe(const Tensor& like) { return uniform(like.shape(), -1.0, 1.0); }
};

using Results = std::vector<GradcheckResult>;

void numerics_suite(Maker& m, Results& out) {
  const auto unary = [&](const std::string& name, Tensor (*op)(const Tensor&), double lo, double hi) {
    Tensor x = m.leaf({3, 5}, lo, hi);
    const Tensor w = m.probe(op(x.detach()));
    out.push_back(gradcheck(name, [=] { return dot(op(x), w); }, {x}, kPrimitiveTol));
  };
  unary("numerics/silu", silu, -2, 2);
  unary("numerics/sigmoid", sigmoid, -2, 2);
  unary("numerics/exp", exp, -2, 2);
  unary("numerics/tanh", tanh, -2, 2);
  unary("numerics/transpose", transpose, -2, 2);
  unary("numerics/relu", relu, -2, 2);
  {
    Tensor x = Tensor::from({1, 3}, {-3.0, 0.0, 3.0}).set_requires_grad(true);
    const Tensor w = m.probe(x);
    out.push_back(gradcheck("numerics/softplus", [=] { return dot(softplus(x), w); }, {x}, kPrimitiveTol));
    Tensor y = m.leaf({3, 5});
    const Tensor wy = m.probe(y);
    out.push_back(gradcheck("numerics/softplus_random", [=] { return dot(softplus(y), wy); }, {y}, kPrimitiveTol));
  }
  {
    Tensor a = m.leaf({3, 4}), b = m.leaf({4, 2});
    const Tensor w = m.probe(Tensor::zeros({3, 2}));
    out.push_back(gradcheck("numerics/matmul", [=] { return dot(matmul(a, b), w); }, {a, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/matmul_sum", [=] { return sum(matmul(a, b)); }, {a}, kPrimitiveTol));
  }
  {
    Tensor a = m.leaf({2, 6}), b = m.leaf({2, 6});
    const Tensor w = m.probe(a);
    out.push_back(gradcheck("numerics/add", [=] { return dot(add(a, b), w); }, {a, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/sub", [=] { return dot(sub(a, b), w); }, {a, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/mul", [=] { return dot(mul(a, b), w); }, {a, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/mean_pair", [=] { return dot(mean_pair(a, b), w); }, {a, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/scale", [=] { return dot(scale(a, -1.7), w); }, {a}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/add_scalar", [=] { return dot(add_scalar(a, 0.3), w); }, {a}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/dot", [=] { return dot(a, b); }, {a, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/flip", [=] { return dot(flip_last_axis(a), w); }, {a}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/flip_segmented", [=] { return dot(flip_last_axis(a, 3), w); }, {a},
                            kPrimitiveTol));
    Tensor alpha = m.leaf({1}, 0.1, 0.4);
    out.push_back(gradcheck("numerics/prelu", [=] { return dot(prelu(a, alpha), w); }, {a, alpha}, kPrimitiveTol));
    Tensor bias = m.leaf({2});
    out.push_back(gradcheck("numerics/add_channel_bias", [=] { return dot(add_channel_bias(a, bias), w); },
                            {a, bias}, kPrimitiveTol));
    const Tensor wr = m.probe(Tensor::zeros({3, 4}));
    out.push_back(gradcheck("numerics/reshape", [=] { return dot(reshape(a, {3, 4}), wr); }, {a}, kPrimitiveTol));
    const Tensor wp = m.probe(Tensor::zeros({2, 9}));
    out.push_back(gradcheck("numerics/pad_right", [=] { return dot(pad_right(a, 3), wp); }, {a}, kPrimitiveTol));
    const Tensor wc = m.probe(Tensor::zeros({2, 4}));
    out.push_back(gradcheck("numerics/crop_right", [=] { return dot(crop_right(a, 4), wc); }, {a}, kPrimitiveTol));
  }
  {
    Tensor x = m.leaf({2, 3, 4});
    const Tensor w = m.probe(Tensor::zeros({4, 2, 3}));
    out.push_back(gradcheck("numerics/permute", [=] { return dot(permute(x, {2, 0, 1}), w); }, {x}, kPrimitiveTol));
    Tensor y = m.leaf({5, 3});
    const Tensor wy = m.probe(Tensor::zeros({2, 3}));
    out.push_back(gradcheck("numerics/slice_rows", [=] { return dot(slice_rows(y, 1, 2), wy); }, {y}, kPrimitiveTol));
  }
  {
    Tensor x = m.leaf({3, 8}), k = m.leaf({3, 4}), b = m.leaf({3});
    const Tensor w = m.probe(x);
    out.push_back(gradcheck("numerics/conv1d_depthwise", [=] { return dot(conv1d_depthwise(x, k, b), w); },
                            {x, k, b}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/conv1d_segmented", [=] { return dot(conv1d_depthwise(x, k, b, 4), w); },
                            {x, k, b}, kPrimitiveTol));
  }
  {
    Tensor x = m.leaf({4, 5}), g = m.leaf({4}, 0.5, 1.5), b = m.leaf({4});
    const Tensor w = m.probe(x);
    out.push_back(gradcheck("numerics/rms_norm", [=] { return dot(rms_norm(x, g), w); }, {x, g}, kPrimitiveTol));
    out.push_back(gradcheck("numerics/layer_norm", [=] { return dot(layer_norm(x, g, b), w); }, {x, g, b},
                            kPrimitiveTol));
  }
  {
    Tensor x = m.leaf({1, 32});
    const Tensor w = m.probe(Tensor::zeros({16, 3}));
    out.push_back(gradcheck("numerics/frame", [=] { return dot(frame(x, 16, 8), w); }, {x}, kPrimitiveTol));
    Tensor f = m.leaf({16, 3});
    const Tensor wf = m.probe(Tensor::zeros({1, 32}));
    out.push_back(gradcheck("numerics/overlap_add_frames", [=] { return dot(overlap_add_frames(f, 8), wf); }, {f},
                            kPrimitiveTol));
  }
}

void ssm_suite(Maker& m, Results& out) {
  for (auto mode : {ssm::Discretization::euler, ssm::Discretization::exact_zoh}) {
    const std::string tag = mode == ssm::Discretization::euler ? "euler" : "zoh";
    for (auto impl : {ssm::ScanImpl::sequential, ssm::ScanImpl::parallel}) {
      const std::string name =
          "ssm_core/selective_scan_" + tag + (impl == ssm::ScanImpl::sequential ? "_seq" : "_par");
      Tensor x = m.leaf({2, 4}), A = m.leaf({2, 2}, -2.0, -0.2), delta = m.leaf({2, 4}, 0.1, 1.0);
      Tensor B = m.leaf({4, 2}), C = m.leaf({4, 2}), skip = m.leaf({2});
      const Tensor w = m.probe(x);
      const ssm::ScanOptions opt{mode, impl, 0};
      out.push_back(gradcheck(name,
                              [=] { return dot(ssm::selective_scan(x, {A, delta, B, C}, skip, opt), w); },
                              {x, A, delta, B, C, skip}, kBlockTol));
    }
  }
  {
    // Two packed sequences of length 3.
    Tensor x = m.leaf({2, 6}), A = m.leaf({2, 2}, -2.0, -0.2), delta = m.leaf({2, 6}, 0.1, 1.0);
    Tensor B = m.leaf({6, 2}), C = m.leaf({6, 2});
    const Tensor w = m.probe(x);
    const ssm::ScanOptions opt{ssm::Discretization::euler, ssm::ScanImpl::parallel, 3};
    out.push_back(gradcheck("ssm_core/selective_scan_segmented",
                            [=] { return dot(ssm::selective_scan(x, {A, delta, B, C}, Tensor(), opt), w); },
                            {x, A, delta, B, C}, kBlockTol));
  }
  {
    // Full selective path: projections -> delta, B, C -> scan.
    const std::size_t E = 2, H = 2, L = 4, r = 1;
    Tensor x = m.leaf({E, L});
    ssm::SelectiveProjection p{m.leaf({r, E}, -1, 1), m.leaf({E, r}, -1, 1), m.leaf({E}, -1, 1),
                               m.leaf({H, E}, -1, 1), m.leaf({H, E}, -1, 1), m.leaf({E, H}, -1, 1)};
    Tensor skip = m.leaf({E});
    const Tensor w = m.probe(x);
    out.push_back(gradcheck(
        "ssm_core/selective_parameterize",
        [=] { return dot(ssm::selective_scan(x, ssm::selective_parameterize(x, p), skip), w); },
        {x, p.dt_down, p.dt_up, p.dt_bias, p.B_proj, p.C_proj, p.A_log, skip}, kBlockTol));
  }
}

std::vector<Tensor> leaves_of(const ParameterList& params) {
  std::vector<Tensor> v;
  for (const auto& p : params) v.push_back(p.tensor);
  return v;
}

void mamba_suite(Maker& m, Results& out) {
  for (bool bidirectional : {true, false}) {
    MambaConfig cfg;
    cfg.model_dim = 2;
    cfg.state_dim = 2;
    cfg.bidirectional = bidirectional;
    const BiMambaWeights w = init_bimamba(cfg, m.rng);
    ParameterList params;
    append_parameters(w, "", params);
    Tensor h = m.leaf({2, 3});
    const Tensor probe = m.probe(h);
    auto inputs = leaves_of(params);
    inputs.push_back(h);
    out.push_back(gradcheck(bidirectional ? "mamba_block/bimamba" : "mamba_block/unidirectional",
                            [=] { return dot(mamba_forward(h, w, cfg), probe); }, inputs, kBlockTol));
  }
  {
    MambaConfig cfg;
    cfg.model_dim = 2;
    cfg.state_dim = 2;
    const BiMambaWeights w = init_bimamba(cfg, m.rng);
    ParameterList params;
    append_parameters(w, "", params);
    Tensor h = m.leaf({2, 6});
    const Tensor probe = m.probe(h);
    auto inputs = leaves_of(params);
    inputs.push_back(h);
    out.push_back(gradcheck("mamba_block/bimamba_segmented",
                            [=] { return dot(bimamba_forward(h, w, cfg, 3), probe); }, inputs, kBlockTol));
  }
}

void dual_path_suite(Maker& m, Results& out) {
  {
    Tensor h = m.leaf({2, 7});
    const Tensor probe = m.probe(h);
    out.push_back(gradcheck("dual_path/chunk_dechunk", [=] { return dot(dechunk(chunk(h, 4, 2)), probe); }, {h},
                            kPrimitiveTol));
    const Tensor probe3 = m.probe(chunk(h.detach(), 4, 2).data);
    out.push_back(gradcheck("dual_path/chunk", [=] { return dot(chunk(h, 4, 2).data, probe3); }, {h},
                            kPrimitiveTol));
  }
  for (auto norm : {NormKind::rms, NormKind::layer}) {
    DualPathConfig cfg;
    cfg.mamba.model_dim = 2;
    cfg.mamba.state_dim = 2;
    cfg.norm = norm;
    DpBlockWeights w = init_dp_block(cfg, m.rng);
    ParameterList params;
    append_parameters(w, "", params);
    // Norm gains start at one; move them off the identity so their gradients are exercised.
    for (auto& p : params) {
      if (p.name.find("norm") != std::string::npos) {
        for (auto& v : p.tensor.mutable_data()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(m.rng);
      }
    }
    Tensor h = m.leaf({2, 4, 3});
    const Tensor probe = m.probe(h);
    auto inputs = leaves_of(params);
    inputs.push_back(h);
    out.push_back(gradcheck(norm == NormKind::rms ? "dual_path/dp_block_rms" : "dual_path/dp_block_layer",
                            [=] { return dot(dp_block(h, w, cfg), probe); }, inputs, kBlockTol));
  }
}

ModelConfig tiny_check_config() {
  ModelConfig c;
  c.model_dim = 4;
  c.num_blocks = 1;
  c.state_dim = 2;
  c.chunk_size = 4;
  return c;
}

void model_suite(Maker& m, Results& out) {
  const SeparationModel model(tiny_check_config(), m.rng());
  const Tensor wave = m.uniform({1, 64}, -1.0, 1.0);
  const Tensor p1 = m.probe(wave), p2 = m.probe(wave);
  auto inputs = leaves_of(model.parameters());
  out.push_back(gradcheck(
      "separation_model/full_tiny",
      [&model, wave, p1, p2] {
        const auto est = model.separate(wave);
        return add(dot(est[0], p1), dot(est[1], p2));
      },
      inputs, kModelTol));
}

void training_suite(Maker& m, Results& out) {
  {
    Tensor e = m.leaf({1, 32});
    const Tensor r = m.uniform({1, 32}, -1.0, 1.0);
    out.push_back(gradcheck("training/si_snr", [=] { return train::si_snr(e, r); }, {e}, kPrimitiveTol));
  }
  {
    Tensor e1 = m.leaf({1, 32}), e2 = m.leaf({1, 32});
    const Tensor r1 = m.uniform({1, 32}, -1.0, 1.0), r2 = m.uniform({1, 32}, -1.0, 1.0);
    out.push_back(gradcheck("training/pit_loss", [=] { return train::pit_loss({e1, e2}, {r1, r2}).loss; },
                            {e1, e2}, kPrimitiveTol));
  }
  {
    const SeparationModel model(tiny_check_config(), m.rng());
    const Tensor s1 = m.uniform({1, 64}, -1.0, 1.0), s2 = m.uniform({1, 64}, -1.0, 1.0);
    const Tensor mix = add(s1, s2);
    out.push_back(gradcheck(
        "training/pit_through_model",
        [&model, mix, s1, s2] { return train::pit_loss(model.separate(mix), {s1, s2}).loss; },
        leaves_of(model.parameters()), kModelTol));
  }
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"numerics",   "ssm_core",         "mamba_block",
                                              "dual_path",  "separation_model", "training"};
  return names;
}

std::vector<GradcheckResult> run_suite(std::string_view module, std::uint64_t seed) {
  Results out;
  const auto run = [&](std::string_view name) {
    const auto& names = suite_names();
    const auto index = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), name) - names.begin());
    Maker m(seed * 1000 + index);
    if (name == "numerics") numerics_suite(m, out);
    else if (name == "ssm_core") ssm_suite(m, out);
    else if (name == "mamba_block") mamba_suite(m, out);
    else if (name == "dual_path") dual_path_suite(m, out);
    else if (name == "separation_model") model_suite(m, out);
    else if (name == "training") training_suite(m, out);
    else throw std::invalid_argument("unknown gradcheck module '" + std::string(name) + "'");
  };
  if (module == "all") {
    for (const auto& n : suite_names()) run(n);
  } else {
    run(module);
  }
  return out;
}

void print_result(std::ostream& os, const GradcheckResult& r) {
  os << (r.passed ? "PASS " : "FAIL ") << r.name << "  max_rel_err=" << std::scientific << std::setprecision(2)
     << r.max_rel_error << " tol=" << r.tolerance << std::defaultfloat << " checked=" << r.checked;
  if (r.skipped_kinks) os << " kinks_skipped=" << r.skipped_kinks;
  os << '\n';
}

}  // namespace dpm::check
