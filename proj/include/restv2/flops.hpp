#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "restv2/attention.hpp"
#include "restv2/flop_tally.hpp"
#include "restv2/model_config.hpp"

namespace restv2 {

struct ModuleFlops {
  std::string name;
  FlopTally flops;
  std::size_t params = 0;
};

/// Multiply-accumulate counts (1 MAC = 1 FLOP) for one image.
///   conv   = Cout * Cin/groups * kh * kw * Ho * Wo
///   linear = positions * din * dout
///   matmul = batch * m * p * q
///   other  = elements produced by softmax, normalizations, per-channel
///            affine, activations and interpolation; elements read by the
///            global average pool. Additions, gathers and reshapes are free.
/// Biases are not counted.
struct FlopsReport {
  std::uint64_t conv_flops = 0;
  std::uint64_t linear_flops = 0;
  std::uint64_t matmul_flops = 0;
  std::uint64_t other_flops = 0;
  std::size_t params = 0;
  std::vector<ModuleFlops> modules;

  std::uint64_t total() const { return conv_flops + linear_flops + matmul_flops + other_flops; }
  FlopTally tally() const { return FlopTally{conv_flops, linear_flops, matmul_flops, other_flops}; }
};

/// Symbolic count of a single-image forward pass at `input` (no execution).
/// Matches the tally of an instrumented Model::forward exactly.
FlopsReport count_flops(const ModelConfig& cfg, Spatial input);

/// count_flops with the block attention style replaced by `style`.
FlopsReport window_style_flops(const ModelConfig& cfg, WindowStyle style, Spatial input);

/// Symbolic count of one attention call (attention_branches) on a single
/// (n, d) token map.
FlopTally attention_flops(const EmsaConfig& cfg, Spatial spatial);

}  // namespace restv2
