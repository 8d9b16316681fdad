#include "dpmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dpmamba/autograd.hpp"

namespace dpm {

using autograd::grad_sink;
using autograd::make_result;

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Forward, typename Derivative>
Tensor unary(const char* name, const Tensor& x, Forward f, Derivative df) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), f);
  return make_result(name, x.shape(), std::move(out), {x},
                     [x, df](std::span<const double> g, std::span<const double> y) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       const auto in = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], y[i]);
                     });
}

void require_rank2(const char* op, const Tensor& t) { autograd::require_rank(op, t, 2); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(C), {a, b},
                     [a, b, m, k, n](std::span<const double> g, std::span<const double>) {
                       const auto A = a.data();
                       const auto B = b.data();
                       if (auto ga = grad_sink(a); !ga.empty()) {
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* brow = B.data() + p * n;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                             ga[i * k + p] += acc;
                           }
                         }
                       }
                       if (auto gb = grad_sink(b); !gb.empty()) {
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = A[i * k + p];
                             double* gbrow = gb.data() + p * n;
                             for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  return permute(a, {1, 0});
}

Tensor add(const Tensor& a, const Tensor& b) {
  autograd::require_same_shape("add", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<const double>) {
                       for (const Tensor* t : {&a, &b}) {
                         auto gt = grad_sink(*t);
                         for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  autograd::require_same_shape("sub", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<const double>) {
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       auto gb = grad_sink(b);
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  autograd::require_same_shape("mul", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<const double>) {
                       const auto x = a.data();
                       const auto y = b.data();
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
                       auto gb = grad_sink(b);
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
                     });
}

Tensor mean_pair(const Tensor& a, const Tensor& b) {
  autograd::require_same_shape("mean_pair", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.5 * (x[i] + y[i]);
  return make_result("mean_pair", a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<const double>) {
                       for (const Tensor* t : {&a, &b}) {
                         auto gt = grad_sink(*t);
                         for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += 0.5 * g[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, softplus_scalar, [](double v, double) { return sigmoid_scalar(v); });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor prelu(const Tensor& x, const Tensor& alpha) {
  autograd::require_shape("prelu", alpha, {1});
  const double a = alpha.data()[0];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0 ? in[i] : a * in[i];
  return make_result("prelu", x.shape(), std::move(out), {x, alpha},
                     [x, alpha](std::span<const double> g, std::span<const double>) {
                       const auto in = x.data();
                       const double a = alpha.data()[0];
                       auto gx = grad_sink(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += in[i] > 0 ? g[i] : a * g[i];
                       auto ga = grad_sink(alpha);
                       if (!ga.empty()) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < in.size(); ++i) {
                           if (in[i] <= 0) acc += g[i] * in[i];
                         }
                         ga[0] += acc;
                       }
                     });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank2("add_channel_bias", x);
  const std::size_t c = x.dim(0), l = x.dim(1);
  autograd::require_shape("add_channel_bias", bias, {c});
  const auto in = x.data();
  const auto b = bias.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t t = 0; t < l; ++t) out[i * l + t] = in[i * l + t] + b[i];
  }
  return make_result("add_channel_bias", x.shape(), std::move(out), {x, bias},
                     [x, bias, c, l](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                       auto gb = grad_sink(bias);
                       if (gb.empty()) return;
                       for (std::size_t i = 0; i < c; ++i) {
                         double acc = 0.0;
                         for (std::size_t t = 0; t < l; ++t) acc += g[i * l + t];
                         gb[i] += acc;
                       }
                     });
}

namespace {

// Index map of a segmented last-axis reversal; it is its own inverse.
void flip_into(std::span<const double> in, std::span<double> out, std::size_t last,
               std::size_t segment, bool accumulate) {
  const std::size_t rows = last ? in.size() / last : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * last;
    double* dst = out.data() + r * last;
    for (std::size_t s0 = 0; s0 < last; s0 += segment) {
      for (std::size_t j = 0; j < segment; ++j) {
        const double v = src[s0 + segment - 1 - j];
        if (accumulate) {
          dst[s0 + j] += v;
        } else {
          dst[s0 + j] = v;
        }
      }
    }
  }
}

}  // namespace

Tensor flip_last_axis(const Tensor& x, std::size_t segment) {
  if (x.rank() == 0) throw ShapeError("flip_last_axis: scalar input");
  const std::size_t last = x.shape().back();
  if (segment == 0) segment = last;
  if (last % segment != 0) {
    throw ShapeError("flip_last_axis: segment " + std::to_string(segment) +
                     " does not divide last axis of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  if (last) flip_into(x.data(), out, last, segment, false);
  return make_result("flip_last_axis", x.shape(), std::move(out), {x},
                     [x, last, segment](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (!gx.empty() && last) flip_into(g, gx, last, segment, true);
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (perm.size() != rank) {
    throw ShapeError("permute: permutation of length " + std::to_string(perm.size()) +
                     " for " + shape_str(in_shape));
  }
  std::vector<bool> used(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || used[p]) throw ShapeError("permute: invalid permutation for " + shape_str(in_shape));
    used[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // Source stride for each output axis.
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[perm[i]];

  const std::size_t n = x.numel();
  std::vector<std::size_t> src_index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    src_index[flat] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      offset += src_strides[ax];
      if (++counter[ax] < out_shape[ax]) break;
      offset -= src_strides[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }

  const auto in = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = in[src_index[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [x, idx = std::move(src_index)](std::span<const double> g,
                                                     std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const auto in = x.data();
  return make_result("reshape", std::move(shape), std::vector<double>(in.begin(), in.end()), {x},
                     [x](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2("slice_rows", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin + count > rows) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  const auto in = x.data();
  std::vector<double> out(in.begin() + begin * cols, in.begin() + (begin + count) * cols);
  return make_result("slice_rows", {count, cols}, std::move(out), {x},
                     [x, begin, cols](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
                     });
}

Tensor pad_right(const Tensor& x, std::size_t amount) {
  require_rank2("pad_right", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1), out_cols = cols + amount;
  const auto in = x.data();
  std::vector<double> out(rows * out_cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(in.begin() + r * cols, in.begin() + (r + 1) * cols, out.begin() + r * out_cols);
  }
  return make_result("pad_right", {rows, out_cols}, std::move(out), {x},
                     [x, rows, cols, out_cols](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * out_cols + c];
                       }
                     });
}

Tensor crop_right(const Tensor& x, std::size_t length) {
  require_rank2("crop_right", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (length > cols) {
    throw ShapeError("crop_right: cannot keep " + std::to_string(length) + " columns of " +
                     shape_str(x.shape()));
  }
  const auto in = x.data();
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(in.begin() + r * cols, in.begin() + r * cols + length, out.begin() + r * length);
  }
  return make_result("crop_right", {rows, length}, std::move(out), {x},
                     [x, rows, cols, length](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < length; ++c) gx[r * cols + c] += g[r * length + c];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const auto in = x.data();
  const double total = std::accumulate(in.begin(), in.end(), 0.0);
  return make_result("sum", {}, {total}, {x},
                     [x](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       for (double& v : gx) v += g[0];
                     });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  autograd::require_same_shape("dot", a, b);
  const auto x = a.data();
  const auto y = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * y[i];
  return make_result("dot", {}, {total}, {a, b},
                     [a, b](std::span<const double> g, std::span<const double>) {
                       const auto x = a.data();
                       const auto y = b.data();
                       auto ga = grad_sink(a);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * y[i];
                       auto gb = grad_sink(b);
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * x[i];
                     });
}

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        std::size_t segment) {
  require_rank2("conv1d_depthwise", x);
  require_rank2("conv1d_depthwise", kernel);
  const std::size_t channels = x.dim(0), length = x.dim(1), width = kernel.dim(1);
  if (kernel.dim(0) != channels) {
    throw ShapeError("conv1d_depthwise: channel mismatch, input " + shape_str(x.shape()) +
                     " vs kernel " + shape_str(kernel.shape()));
  }
  if (width == 0) throw ShapeError("conv1d_depthwise: kernel width must be >= 1");
  autograd::require_shape("conv1d_depthwise", bias, {channels});
  if (segment == 0) segment = length;
  if (length % segment != 0) {
    throw ShapeError("conv1d_depthwise: segment " + std::to_string(segment) +
                     " does not divide length " + std::to_string(length));
  }

  const auto in = x.data();
  const auto w = kernel.data();
  const auto b = bias.data();
  std::vector<double> out(channels * length);
  for (std::size_t e = 0; e < channels; ++e) {
    const double* xe = in.data() + e * length;
    const double* we = w.data() + e * width;
    double* oe = out.data() + e * length;
    for (std::size_t s0 = 0; s0 < length; s0 += segment) {
      for (std::size_t t = 0; t < segment; ++t) {
        double acc = b[e];
        // Tap j reads position t - (width - 1) + j within the segment.
        const std::size_t first = t + 1 >= width ? 0 : width - 1 - t;
        for (std::size_t j = first; j < width; ++j) acc += we[j] * xe[s0 + t + j + 1 - width];
        oe[s0 + t] = acc;
      }
    }
  }
  return make_result(
      "conv1d_depthwise", x.shape(), std::move(out), {x, kernel, bias},
      [x, kernel, bias, channels, length, width, segment](std::span<const double> g,
                                                          std::span<const double>) {
        const auto in = x.data();
        const auto w = kernel.data();
        auto gx = grad_sink(x);
        auto gw = grad_sink(kernel);
        auto gb = grad_sink(bias);
        for (std::size_t e = 0; e < channels; ++e) {
          const double* ge = g.data() + e * length;
          if (!gb.empty()) {
            double acc = 0.0;
            for (std::size_t t = 0; t < length; ++t) acc += ge[t];
            gb[e] += acc;
          }
          for (std::size_t s0 = 0; s0 < length; s0 += segment) {
            for (std::size_t t = 0; t < segment; ++t) {
              const std::size_t first = t + 1 >= width ? 0 : width - 1 - t;
              for (std::size_t j = first; j < width; ++j) {
                const std::size_t src = e * length + s0 + t + j + 1 - width;
                if (!gx.empty()) gx[src] += ge[s0 + t] * w[e * width + j];
                if (!gw.empty()) gw[e * width + j] += ge[s0 + t] * in[src];
              }
            }
          }
        }
      });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_rank2("rms_norm", x);
  const std::size_t d = x.dim(0), m = x.dim(1);
  autograd::require_shape("rms_norm", gain, {d});
  const auto in = x.data();
  const auto gv = gain.data();
  std::vector<double> inv_rms(m);
  std::vector<double> out(d * m);
  for (std::size_t c = 0; c < m; ++c) {
    double ms = 0.0;
    for (std::size_t i = 0; i < d; ++i) ms += in[i * m + c] * in[i * m + c];
    inv_rms[c] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    for (std::size_t i = 0; i < d; ++i) out[i * m + c] = in[i * m + c] * inv_rms[c] * gv[i];
  }
  return make_result(
      "rms_norm", x.shape(), std::move(out), {x, gain},
      [x, gain, d, m, inv = std::move(inv_rms)](std::span<const double> g, std::span<const double>) {
        const auto in = x.data();
        const auto gv = gain.data();
        auto gx = grad_sink(x);
        auto gg = grad_sink(gain);
        for (std::size_t c = 0; c < m; ++c) {
          const double r = inv[c];
          // y_i = g_i x_i r, r = (mean(x^2)+eps)^{-1/2}; dr/dx_k = -r^3 x_k / d.
          double proj = 0.0;
          for (std::size_t i = 0; i < d; ++i) proj += g[i * m + c] * gv[i] * in[i * m + c];
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = i * m + c;
            if (!gx.empty()) {
              gx[k] += g[k] * gv[i] * r - in[k] * r * r * r * proj / static_cast<double>(d);
            }
            if (!gg.empty()) gg[i] += g[k] * in[k] * r;
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2("layer_norm", x);
  const std::size_t d = x.dim(0), m = x.dim(1);
  autograd::require_shape("layer_norm", gain, {d});
  autograd::require_shape("layer_norm", bias, {d});
  const auto in = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  const double dd = static_cast<double>(d);
  std::vector<double> xhat(d * m);
  std::vector<double> inv_std(m);
  std::vector<double> out(d * m);
  for (std::size_t c = 0; c < m; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += in[i * m + c];
    mean /= dd;
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i * m + c] - mean) * (in[i * m + c] - mean);
    var /= dd;
    inv_std[c] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = i * m + c;
      xhat[k] = (in[k] - mean) * inv_std[c];
      out[k] = xhat[k] * gv[i] + bv[i];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, d, m, dd, xh = std::move(xhat), inv = std::move(inv_std)](
          std::span<const double> g, std::span<const double>) {
        const auto gv = gain.data();
        auto gx = grad_sink(x);
        auto gg = grad_sink(gain);
        auto gb = grad_sink(bias);
        for (std::size_t c = 0; c < m; ++c) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = i * m + c;
            const double gy = g[k] * gv[i];
            sum_gy += gy;
            sum_gy_xhat += gy * xh[k];
            if (!gg.empty()) gg[i] += g[k] * xh[k];
            if (!gb.empty()) gb[i] += g[k];
          }
          if (gx.empty()) continue;
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = i * m + c;
            const double gy = g[k] * gv[i];
            gx[k] += inv[c] * (gy - sum_gy / dd - xh[k] * sum_gy_xhat / dd);
          }
        }
      });
}

Tensor frame(const Tensor& x, std::size_t width, std::size_t stride) {
  require_rank2("frame", x);
  if (x.dim(0) != 1) throw ShapeError("frame: expected a [1 x T] waveform, got " + shape_str(x.shape()));
  if (width == 0 || stride == 0) throw ShapeError("frame: width and stride must be positive");
  const std::size_t t_len = x.dim(1);
  if (t_len < width || (t_len - width) % stride != 0) {
    throw ShapeError("frame: length " + std::to_string(t_len) + " is not width " +
                     std::to_string(width) + " plus a multiple of stride " + std::to_string(stride));
  }
  const std::size_t n = (t_len - width) / stride + 1;
  const auto in = x.data();
  std::vector<double> out(width * n);
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t f = 0; f < n; ++f) out[j * n + f] = in[f * stride + j];
  }
  return make_result("frame", {width, n}, std::move(out), {x},
                     [x, width, stride, n](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t j = 0; j < width; ++j) {
                         for (std::size_t f = 0; f < n; ++f) gx[f * stride + j] += g[j * n + f];
                       }
                     });
}

Tensor overlap_add_frames(const Tensor& frames, std::size_t stride) {
  require_rank2("overlap_add_frames", frames);
  if (stride == 0) throw ShapeError("overlap_add_frames: stride must be positive");
  const std::size_t width = frames.dim(0), n = frames.dim(1);
  if (n == 0) throw ShapeError("overlap_add_frames: no frames");
  const std::size_t t_len = (n - 1) * stride + width;
  const auto in = frames.data();
  std::vector<double> out(t_len, 0.0);
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t f = 0; f < n; ++f) out[f * stride + j] += in[j * n + f];
  }
  return make_result("overlap_add_frames", {1, t_len}, std::move(out), {frames},
                     [frames, width, stride, n](std::span<const double> g, std::span<const double>) {
                       auto gf = grad_sink(frames);
                       if (gf.empty()) return;
                       for (std::size_t j = 0; j < width; ++j) {
                         for (std::size_t f = 0; f < n; ++f) gf[j * n + f] += g[f * stride + j];
                       }
                     });
}

}  // namespace dpm
