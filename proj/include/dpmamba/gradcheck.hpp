#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dpmamba/tensor.hpp"

namespace dpm::check {

inline constexpr double kFdStep = 1e-5;
/// Relative error is |a - n| / max(|a|, |n|, kRelFloor).
inline constexpr double kRelFloor = 1e-3;

inline constexpr double kPrimitiveTol = 1e-6;
inline constexpr double kBlockTol = 1e-5;
inline constexpr double kModelTol = 1e-4;

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  /// Entries whose one-sided differences disagree by more than a smooth
  /// function allows (a ReLU kink inside the step). Not compared.
  std::size_t skipped_kinks = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric);

/// `loss` must rebuild a scalar from the current values of `inputs`, which
/// are trainable leaves. Each input entry is perturbed by +/- step.
GradcheckResult gradcheck(std::string name, const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                          double tolerance, double step = kFdStep);

/// numerics, ssm_core, mamba_block, dual_path, separation_model, training.
const std::vector<std::string>& suite_names();
/// Runs one suite, or every suite for "all". Unknown names throw invalid_argument.
std::vector<GradcheckResult> run_suite(std::string_view module, std::uint64_t seed = 0);

void print_result(std::ostream& os, const GradcheckResult& r);

}  // namespace dpm::check
