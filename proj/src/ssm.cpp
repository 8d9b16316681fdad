#include "dpmamba/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dpmamba/autograd.hpp"
#include "dpmamba/ops.hpp"

namespace dpm::ssm {

using autograd::grad_sink;

namespace {

struct Dims {
  std::size_t E, L, H;
};

Dims check_params(const char* op, const Tensor& x, const SsmParams& p) {
  autograd::require_rank(op, x, 2);
  autograd::require_rank(op, p.A, 2);
  const Dims d{x.dim(0), x.dim(1), p.A.dim(1)};
  if (p.A.dim(0) != d.E) {
    throw ShapeError(std::string(op) + ": A " + shape_str(p.A.shape()) + " does not match x " +
                     shape_str(x.shape()));
  }
  if (p.delta.shape() != x.shape()) {
    throw ShapeError(std::string(op) + ": delta " + shape_str(p.delta.shape()) +
                     " does not match x " + shape_str(x.shape()));
  }
  for (const Tensor* t : {&p.B, &p.C}) {
    if (t->shape() != Shape{d.L, d.H}) {
      throw ShapeError(std::string(op) + ": length mismatch, expected per-step parameters " +
                       shape_str({d.L, d.H}) + ", got " + shape_str(t->shape()));
    }
  }
  return d;
}

ScanView make_view(const Tensor& x, const SsmParams& p, const Tensor& skip, const Dims& d,
                   const ScanOptions& o) {
  ScanView v;
  v.x = x.data();
  v.delta = p.delta.data();
  v.A = p.A.data();
  v.B = p.B.data();
  v.C = p.C.data();
  if (skip.defined()) v.skip = skip.data();
  v.channels = d.E;
  v.length = d.L;
  v.state = d.H;
  v.segment = o.segment;
  v.discretization = o.discretization;
  return v;
}

}  // namespace

Discretized discretize(const Tensor& A, const Tensor& delta, const Tensor& B, Discretization mode) {
  autograd::require_rank("discretize", A, 2);
  autograd::require_rank("discretize", delta, 2);
  autograd::require_rank("discretize", B, 2);
  const std::size_t E = A.dim(0), H = A.dim(1), L = delta.dim(1);
  if (delta.dim(0) != E || B.dim(0) != L || B.dim(1) != H) {
    throw ShapeError("discretize: incompatible shapes A " + shape_str(A.shape()) + ", delta " +
                     shape_str(delta.shape()) + ", B " + shape_str(B.shape()));
  }
  const auto a = A.data();
  const auto dl = delta.data();
  const auto b = B.data();
  std::vector<double> abar(E * L * H), bbar(E * L * H);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < L; ++t) {
      const double d = dl[e * L + t];
      if (!(d > 0.0)) throw NumericalError("discretize: delta must be > 0");
      for (std::size_t n = 0; n < H; ++n) {
        const double z = d * a[e * H + n];
        const std::size_t k = (e * L + t) * H + n;
        abar[k] = std::exp(z);
        if (mode == Discretization::euler) {
          bbar[k] = d * b[t * H + n];
        } else {
          const double An = a[e * H + n];
          bbar[k] = (An == 0.0 ? d : std::expm1(z) / An) * b[t * H + n];
        }
        if (!std::isfinite(abar[k]) || !std::isfinite(bbar[k])) {
          throw NumericalError("discretize: non-finite coefficient");
        }
      }
    }
  }
  return {Tensor::from({E, L, H}, std::move(abar)), Tensor::from({E, L, H}, std::move(bbar))};
}

Tensor selective_scan(const Tensor& x, const SsmParams& p, const Tensor& skip, const ScanOptions& o) {
  const Dims d = check_params("selective_scan", x, p);
  if (skip.defined()) autograd::require_shape("selective_scan", skip, {d.E});
  const ScanView view = make_view(x, p, skip, d, o);
  validate(view);

  std::vector<double> y(d.E * d.L);
  if (o.impl == ScanImpl::parallel) {
    scan_parallel_kernel(view, y);
  } else {
    scan_sequential_kernel(view, y);
  }

  return autograd::make_result(
      "selective_scan", {d.E, d.L}, std::move(y), {x, p.A, p.delta, p.B, p.C, skip},
      [x, p, skip, d, o](std::span<const double> gy, std::span<const double>) {
        const ScanView view = make_view(x, p, skip, d, o);
        ScanGrads grads;
        grads.x = grad_sink(x);
        grads.delta = grad_sink(p.delta);
        grads.A = grad_sink(p.A);
        grads.B = grad_sink(p.B);
        grads.C = grad_sink(p.C);
        if (skip.defined()) grads.skip = grad_sink(skip);
        scan_backward_kernel(view, gy, grads);
      });
}

Tensor scan_sequential(const Tensor& x, const SsmParams& params, Discretization mode) {
  return selective_scan(x, params, Tensor(), {mode, ScanImpl::sequential, 0});
}

Tensor scan_parallel(const Tensor& x, const SsmParams& params, Discretization mode) {
  return selective_scan(x, params, Tensor(), {mode, ScanImpl::parallel, 0});
}

SsmParams selective_parameterize(const Tensor& x, const SelectiveProjection& w) {
  autograd::require_rank("selective_parameterize", x, 2);
  const Tensor dt = add_channel_bias(matmul(w.dt_up, matmul(w.dt_down, x)), w.dt_bias);
  SsmParams p;
  p.delta = softplus(dt);
  p.B = transpose(matmul(w.B_proj, x));
  p.C = transpose(matmul(w.C_proj, x));
  p.A = scale(exp(w.A_log), -1.0);
  return p;
}

// ---------------------------------------------------------------------------
// Dense reference

namespace {

using Matrix = std::vector<double>;

Matrix matmul_sq(const Matrix& a, const Matrix& b, std::size_t n) {
  Matrix c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double av = a[i * n + k];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[k * n + j];
    }
  }
  return c;
}

Matrix expm(Matrix m, std::size_t n) {
  double norm = 0.0;  // infinity norm
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(m[i * n + j]);
    norm = std::max(norm, row);
  }
  int squarings = 0;
  while (norm > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const double factor = std::ldexp(1.0, -squarings);
  for (double& v : m) v *= factor;

  Matrix result(n * n, 0.0);
  Matrix term(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) result[i * n + i] = term[i * n + i] = 1.0;
  for (int k = 1; k <= 24; ++k) {
    term = matmul_sq(term, m, n);
    for (double& v : term) v /= k;
    for (std::size_t i = 0; i < n * n; ++i) result[i] += term[i];
  }
  for (int s = 0; s < squarings; ++s) result = matmul_sq(result, result, n);
  return result;
}

}  // namespace

DenseDiscretized discretize_dense(const DenseSsm& ssm) {
  const std::size_t H = ssm.state;
  if (ssm.A.size() != H * H || ssm.B.size() != H || ssm.C.size() != H) {
    throw ShapeError("DenseSsm: A must be HxH and B, C length H");
  }
  if (!(ssm.delta > 0.0)) throw NumericalError("DenseSsm: delta must be > 0");
  DenseDiscretized out;
  if (ssm.discretization == Discretization::euler) {
    Matrix m(ssm.A);
    for (double& v : m) v *= ssm.delta;
    out.Abar = expm(std::move(m), H);
    out.Bbar.resize(H);
    for (std::size_t i = 0; i < H; ++i) out.Bbar[i] = ssm.delta * ssm.B[i];
    return out;
  }
  // exp([[dA, dB], [0, 0]]) = [[exp(dA), phi1(dA) dB], [0, 1]]
  const std::size_t n = H + 1;
  Matrix aug(n * n, 0.0);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < H; ++j) aug[i * n + j] = ssm.delta * ssm.A[i * H + j];
    aug[i * n + H] = ssm.delta * ssm.B[i];
  }
  const Matrix e = expm(std::move(aug), n);
  out.Abar.resize(H * H);
  out.Bbar.resize(H);
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < H; ++j) out.Abar[i * H + j] = e[i * n + j];
    out.Bbar[i] = e[i * n + H];
  }
  return out;
}

std::vector<double> ssm_kernel(const DenseSsm& ssm, std::size_t length) {
  const std::size_t H = ssm.state;
  const DenseDiscretized disc = discretize_dense(ssm);
  std::vector<double> kernel(length);
  std::vector<double> v = disc.Bbar;  // Abar^k Bbar
  std::vector<double> next(H);
  for (std::size_t k = 0; k < length; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < H; ++i) acc += ssm.C[i] * v[i];
    kernel[k] = acc;
    for (std::size_t i = 0; i < H; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < H; ++j) s += disc.Abar[i * H + j] * v[j];
      next[i] = s;
    }
    v.swap(next);
  }
  return kernel;
}

Tensor kernel_convolve(const Tensor& x, const DenseSsm& ssm) {
  autograd::require_rank("kernel_convolve", x, 2);
  if (x.dim(0) != 1) throw ShapeError("kernel_convolve: expected [1 x L], got " + shape_str(x.shape()));
  const std::size_t L = x.dim(1);
  if (ssm.state > kOracleMaxState || L > kOracleMaxLength) {
    throw std::invalid_argument("kernel_convolve: oracle limited to H <= 32 and L <= 1024");
  }
  const std::vector<double> kernel = ssm_kernel(ssm, L);
  const auto in = x.data();
  std::vector<double> y(L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= t; ++k) acc += kernel[k] * in[t - k];
    y[t] = acc;
  }
  return Tensor::from({1, L}, std::move(y));
}

}  // namespace dpm::ssm
