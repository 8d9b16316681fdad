#pragma once

// Differentiable operation set. No implicit broadcasting: binary ops need equal
// shapes, except the explicit scalar and per-channel variants below.

#include <cstddef>
#include <vector>

#include "dpmamba/tensor.hpp"

namespace dpm {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise binary (equal shapes)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// (a + b) / 2
Tensor mean_pair(const Tensor& a, const Tensor& b);

// Scalar-with-tensor
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// Elementwise unary
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
/// Single shared slope for negative inputs; `alpha` has shape [1].
Tensor prelu(const Tensor& x, const Tensor& alpha);

/// x[C x L] + bias[C], bias repeated along the last axis.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Layout
/// Reverses the last axis. With `segment` > 0 the last axis is split into
/// consecutive runs of that length and each run is reversed on its own.
Tensor flip_last_axis(const Tensor& x, std::size_t segment = 0);
/// Materializing axis permutation; out.shape[i] = x.shape[perm[i]].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, Shape shape);
/// Rows [begin, begin+count) of a rank-2 tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

/// x[C x L] -> [C x (L + amount)] with zeros appended along the last axis.
Tensor pad_right(const Tensor& x, std::size_t amount);
/// First `length` columns of x[C x L].
Tensor crop_right(const Tensor& x, std::size_t length);

// Reductions
Tensor sum(const Tensor& x);
/// sum(a * b) as a scalar.
Tensor dot(const Tensor& a, const Tensor& b);

/// Depthwise 1-D convolution over x[E x L] with kernel[E x W] and bias[E].
/// Causal: W-1 zeros are padded on the left of each sequence, so
///   out[e,t] = bias[e] + sum_j kernel[e,j] * x[e, t - (W-1) + j].
/// With `segment` > 0 the last axis holds independent sequences of that length.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        std::size_t segment = 0);

/// RMSNorm over axis 0 of x[D x M]: x * g / sqrt(mean(x^2) + eps).
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-8);
/// LayerNorm over axis 0 of x[D x M]: (x - mu) * g / sqrt(var + eps) + b.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-8);

/// Overlapping analysis frames of a waveform x[1 x T]: out[j, n] = x[n*stride + j],
/// shape [width x N] with N = (T - width) / stride + 1. T - width must be a
/// multiple of `stride`.
Tensor frame(const Tensor& x, std::size_t width, std::size_t stride);
/// Adjoint of frame(): sums frames[width x N] back into [1 x (N-1)*stride + width].
Tensor overlap_add_frames(const Tensor& frames, std::size_t stride);

}  // namespace dpm
