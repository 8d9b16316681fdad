#pragma once

// Building blocks for defining differentiable ops outside ops.cpp.

#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "dpmamba/tensor.hpp"

namespace dpm::autograd {

// Receives the gradient of the op output and the output values themselves.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

/// Wraps freshly computed values as an op output. When recording is on and any
/// input requires grad, `backward` is attached and called once during the sweep
/// with the gradient and values of the output.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

/// Gradient buffer of `t`, zero-initialized on first touch. Returns an empty
/// span when `t` does not require grad, so callers can skip the work.
std::span<double> grad_sink(const Tensor& t);

void require_shape(std::string_view op, const Tensor& t, const Shape& expected);
void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b);
void require_rank(std::string_view op, const Tensor& t, std::size_t rank);

}  // namespace dpm::autograd
