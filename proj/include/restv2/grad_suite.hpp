#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "restv2/gradcheck.hpp"

namespace restv2 {

struct SuiteCase {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference checks of every differentiable tensor-core op plus the
/// attention and positional building blocks, each on small random f64 inputs.
std::vector<SuiteCase> op_gradient_suite(std::uint64_t seed = 42);

/// Gradient check of the miniature model (C=16, blocks {1,1,1,1}, 2 classes,
/// 32x32 input) with respect to the image and every parameter tensor.
/// `samples_per_tensor` elements are probed per tensor (0 = all).
SuiteCase mini_model_gradcheck(std::uint64_t seed = 42, std::size_t samples_per_tensor = 4);

double suite_max_error(const std::vector<SuiteCase>& cases);

}  // namespace restv2
