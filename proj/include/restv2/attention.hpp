#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

#include "restv2/tensor.hpp"

namespace restv2 {

enum class UpsampleStrategy { none, nearest, bilinear, pixel_shuffle };
/// Re-weighting applied after the head-mixing conv of MHIM. `identity` is a
/// test mode that bypasses normalization.
enum class MhimNorm { instance, layer, identity };
enum class WindowStyle { global, win, hwin, cwin };

std::string to_string(UpsampleStrategy s);
std::string to_string(MhimNorm n);
std::string to_string(WindowStyle s);
UpsampleStrategy parse_upsample(const std::string& text);
MhimNorm parse_mhim_norm(const std::string& text);
WindowStyle parse_window_style(const std::string& text);

struct Spatial {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tokens() const { return height * width; }
  bool operator==(const Spatial&) const = default;
};

/// Hyper-parameters of one attention block.
struct EmsaConfig {
  std::size_t dim = 0;        // d_m
  std::size_t heads = 1;      // k
  std::size_t reduction = 1;  // r, one of {1, 2, 4, 8}
  UpsampleStrategy upsample = UpsampleStrategy::pixel_shuffle;
  bool mhim = false;
  MhimNorm norm_kind = MhimNorm::instance;
  WindowStyle window = WindowStyle::global;
  std::size_t window_size = 0;

  std::size_t head_dim() const { return dim / heads; }
  /// Throws ConfigError when d_m != k * d_k, r is not a power of two <= 8, or
  /// a windowed style has no window size.
  void validate() const;
  /// Extents of the key/value map after the depth-wise downsample.
  Spatial reduced(Spatial full) const;
};

/// Parameters of one attention block. Optional members stay undefined when
/// the configuration does not use them.
template <typename T>
struct AttentionWeights {
  Tensor<T> q_weight, q_bias;      // (d, d), (d)
  Tensor<T> k_weight, k_bias;
  Tensor<T> v_weight, v_bias;
  Tensor<T> down_weight, down_bias;  // (d, 1, r+1, r+1), (d); r > 1
  Tensor<T> down_gamma, down_beta;   // (d); r > 1
  Tensor<T> up_weight, up_bias;      // (d*r*r, 1, 3, 3), (d*r*r); pixel_shuffle
  Tensor<T> mhim_weight, mhim_bias;  // (k, k, 1, 1), (k); mhim
  Tensor<T> proj_weight, proj_bias;  // (d, d), (d)
  Tensor<T> rpe_h, rpe_w;            // (k, h', 1, d_k), (k, 1, w', d_k); optional

  /// Throws DimensionError if a present tensor disagrees with `cfg`.
  void check(const EmsaConfig& cfg) const;
};

/// Gaussian-initialized weights for standalone use and tests.
template <typename T>
AttentionWeights<T> random_attention_weights(const EmsaConfig& cfg, std::uint64_t seed, double stddev = 0.2);

/// The two additive terms of EMSAv2, computed from one shared V projection.
template <typename T>
struct AttentionBranches {
  Tensor<T> attention;  // out_proj(Softmax(QK^T / sqrt(d_k)) V), (B, n, d)
  Tensor<T> upsample;   // Up(V), (B, n, d); undefined when strategy is none
  Tensor<T> values;     // V in token form, (B, n', d)
  Spatial reduced;
};

template <typename T>
AttentionBranches<T> attention_branches(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                                        Spatial spatial);

/// Efficient multi-head self-attention: keys and values come from a
/// depth-wise downsampled, layer-normalized copy of x.
template <typename T>
Tensor<T> emsa_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg, Spatial spatial);

/// Up(V): V (B, n', d) at the reduced extents back to (B, n, d) at `full`.
template <typename T>
Tensor<T> upsample_branch(const Tensor<T>& v, const AttentionWeights<T>& w, const EmsaConfig& cfg, Spatial reduced,
                          Spatial full);

/// emsa_forward(x) + upsample_branch(V).
template <typename T>
Tensor<T> emsav2_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg, Spatial spatial);

/// Head mixing: 1x1 conv over the head axis of (B, k, n, n').
template <typename T>
Tensor<T> mhim_mix(const Tensor<T>& attn, const Tensor<T>& weight, const Tensor<T>& bias);
/// Re-weighting normalization of (B, k, n, n').
template <typename T>
Tensor<T> mhim_reweight(const Tensor<T>& attn, MhimNorm norm_kind);
/// mhim_reweight(mhim_mix(attn)). Inside attention the softmax sits between
/// the two steps.
template <typename T>
Tensor<T> mhim_apply(const Tensor<T>& attn, const Tensor<T>& weight, const Tensor<T>& bias, MhimNorm norm_kind);

/// Attention-free block body: out_proj(Up(V(LN(DWConv(x))))).
template <typename T>
Tensor<T> convnet_branch_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                                 Spatial spatial);

struct PadMeta {
  std::size_t batch = 0;
  Spatial original;
  Spatial padded;
  std::size_t window = 0;

  std::size_t windows_y() const { return padded.height / window; }
  std::size_t windows_x() const { return padded.width / window; }
  std::size_t window_count() const { return windows_y() * windows_x(); }
  bool operator==(const PadMeta&) const = default;
};

/// Zero-pads (B, H*W, d) up to multiples of ws and cuts it into
/// (B * windows, ws*ws, d); windows are enumerated row-major per batch item.
template <typename T>
std::pair<Tensor<T>, PadMeta> window_partition(const Tensor<T>& x, Spatial spatial, std::size_t window);

/// Inverse of window_partition including the crop of the padding.
template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, const PadMeta& meta);

struct StyleContext {
  std::size_t stage = 0;
  std::size_t block = 0;
  bool is_last_block = false;
};

/// Whether the block described by `ctx` runs windowed attention under `style`.
bool uses_windows(WindowStyle style, const StyleContext& ctx);

/// Routes a block's attention through the global or windowed path.
template <typename T>
AttentionBranches<T> styled_attention_branches(const Tensor<T>& x, const AttentionWeights<T>& w,
                                               const EmsaConfig& cfg, Spatial spatial, const StyleContext& ctx);

template <typename T>
Tensor<T> styled_block_attention(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                                 Spatial spatial, const StyleContext& ctx);

}  // namespace restv2
