#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "restv2/tensor.hpp"

namespace restv2 {

/// Fourth-order central-difference estimate of df/dx for every element of x:
///   (8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h,  h = step * max(1, |x_i|).
TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x, double step = 1e-5);

/// Same estimate for a single flat index.
double finite_diff_at(const std::function<double(const TensorD&)>& f, const TensorD& x, std::size_t index,
                      double step = 1e-5);

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-3;
  /// Elements probed per input; 0 checks every element.
  std::size_t samples_per_input = 0;
  std::uint64_t seed = 7;
  /// Denominator floor, multiplied by max(1, largest analytic gradient
  /// magnitude over all inputs) so exactly-zero gradients are judged against
  /// the scale of the check rather than in absolute terms.
  double floor = 1e-6;
};

/// Builds `inputs` as requires_grad leaves, reduces `fn(inputs)` to a scalar
/// through a fixed random projection, runs backward, and compares each input
/// gradient against central differences of the same scalar.
GradCheckResult check_gradients(const std::function<TensorD(const std::vector<TensorD>&)>& fn,
                                const std::vector<TensorD>& inputs, const std::vector<std::string>& names,
                                const GradCheckOptions& options = {});

}  // namespace restv2
