#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dpmamba/tensor.hpp"

namespace dpm {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Ordered parameter registry. Entries alias the module's tensors.
using ParameterList = std::vector<NamedParameter>;

std::size_t total_size(const ParameterList& params);
void zero_grads(ParameterList& params);

using Rng = std::mt19937_64;

/// Trainable leaf with entries drawn from U(-bound, bound).
Tensor uniform_parameter(Shape shape, double bound, Rng& rng);
Tensor constant_parameter(Shape shape, double value);

}  // namespace dpm
