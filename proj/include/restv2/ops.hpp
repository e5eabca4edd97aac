#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "restv2/tensor.hpp"

namespace restv2 {

/// LayerNorm epsilon used throughout the model.
inline constexpr double kNormEps = 1e-6;

template <typename T>
using OptTensor = std::optional<Tensor<T>>;

// Elementwise and structural ops. All are differentiable when recorded on an
// active Tape. Shape errors throw DimensionError naming both operands.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
/// a + b where b's shape equals a trailing suffix of a's shape.
template <typename T> Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> sum(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> transpose_last(const Tensor<T>& a);

/// out.flat[i] = index[i] < 0 ? 0 : a.flat[index[i]]. Backward scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape out_shape, std::shared_ptr<const std::vector<std::int64_t>> index);

/// Batched contraction (..., m, p) x (..., p, q); leading extents must be equal.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x (..., din) times w (din, dout) plus optional bias (dout).
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const OptTensor<T>& bias);

/// Max-shifted softmax along `axis` (negative counts from the back).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Normalizes over the last axis with affine gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(kNormEps));

/// (B, C, H, W): normalize each (b, c) plane over H*W, no affine.
template <typename T> Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(kNormEps));
/// (B, C, H, W): normalize each (b, h, w) position over C, no affine.
template <typename T> Tensor<T> channel_norm(const Tensor<T>& x, T eps = T(kNormEps));

/// Per-channel affine on (B, C, H, W); inference-form batch norm.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Zero-padded 2-D cross-correlation. w is (Cout, Cin/groups, kh, kw).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const OptTensor<T>& bias, Conv2dOptions opts = {});

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Exact erf formulation.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

/// (B, C*r*r, h, w) -> (B, C, h*r, w*r);
/// out[b, c, i*r + p, j*r + q] = in[b, c*r*r + p*r + q, i, j].
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r);
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r);

/// (B, C, H, W) -> (B, C): spatial mean.
template <typename T> Tensor<T> avg_pool_global(const Tensor<T>& x);

/// Nearest-neighbour r-times upsampling written directly at (out_h, out_w).
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t r, std::size_t out_h, std::size_t out_w);
/// Bilinear r-times upsampling (half-pixel centers) at (out_h, out_w).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t r, std::size_t out_h, std::size_t out_w);

/// Keeps the top-left (h, w) region of a (B, C, H, W) tensor.
template <typename T> Tensor<T> crop2d(const Tensor<T>& x, std::size_t h, std::size_t w);

/// (B, H*W, C) <-> (B, C, H, W), row-major spatial flattening.
template <typename T> Tensor<T> tokens_to_image(const Tensor<T>& x, std::size_t h, std::size_t w);
template <typename T> Tensor<T> image_to_tokens(const Tensor<T>& x);

}  // namespace restv2
