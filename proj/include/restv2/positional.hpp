#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "restv2/tensor.hpp"

namespace restv2 {

enum class PeKind { none, ape, rpe, pa };

std::string to_string(PeKind kind);
PeKind parse_pe_kind(const std::string& text);

/// Geometry of one stage as seen by the positional embeddings.
struct PeStage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t reduction = 1;
  std::size_t blocks = 0;

  /// Key-side extents h' = ceil(H / r), w' = ceil(W / r).
  std::size_t key_height() const { return (height + reduction - 1) / reduction; }
  std::size_t key_width() const { return (width + reduction - 1) / reduction; }
};

struct PeConfig {
  PeKind kind = PeKind::none;
  std::vector<PeStage> stages;
};

/// Closed-form learnable parameter count of the embedding:
///   ape: sum H*W*C over stage inputs;
///   rpe: sum blocks * (h' + w') * C;
///   pa:  sum C * (9 + 1) (3x3 depth-wise kernel plus bias).
std::size_t pe_parameter_count(const PeConfig& config);

/// x (B, n, d) + theta (n, d). No interpolation: a mismatch throws.
template <typename T>
Tensor<T> ape_apply(const Tensor<T>& x, const Tensor<T>& theta);

/// P = P_h + P_w broadcast to (k, h', w', d_k), flattened to (k, h'*w', d_k).
template <typename T>
Tensor<T> rpe_position_table(const Tensor<T>& pos_h, const Tensor<T>& pos_w);

/// Attention logits Q (K + P)^T / sqrt(d_k) for q (B, k, n, d_k) and
/// keys (B, k, n', d_k), with P_h (k, h', 1, d_k) and P_w (k, 1, w', d_k).
template <typename T>
Tensor<T> rpe_apply(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& pos_h, const Tensor<T>& pos_w);

/// Pixel attention x * sigmoid(DWConv3x3(x)) on (B, C, H, W).
template <typename T>
Tensor<T> pa_apply(const Tensor<T>& x, const Tensor<T>& dw_weight, const Tensor<T>& dw_bias);

}  // namespace restv2
