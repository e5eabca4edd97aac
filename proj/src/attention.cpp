#include "restv2/attention.hpp"

#include <cmath>
#include <memory>
#include <random>

#include "restv2/errors.hpp"
#include "restv2/ops.hpp"
#include "restv2/positional.hpp"

namespace restv2 {

std::string to_string(UpsampleStrategy s) {
  switch (s) {
    case UpsampleStrategy::none: return "none";
    case UpsampleStrategy::nearest: return "nearest";
    case UpsampleStrategy::bilinear: return "bilinear";
    case UpsampleStrategy::pixel_shuffle: return "pixel_shuffle";
  }
  return "none";
}

std::string to_string(MhimNorm n) {
  switch (n) {
    case MhimNorm::instance: return "instance";
    case MhimNorm::layer: return "layer";
    case MhimNorm::identity: return "identity";
  }
  return "instance";
}

std::string to_string(WindowStyle s) {
  switch (s) {
    case WindowStyle::global: return "global";
    case WindowStyle::win: return "win";
    case WindowStyle::hwin: return "hwin";
    case WindowStyle::cwin: return "cwin";
  }
  return "global";
}

UpsampleStrategy parse_upsample(const std::string& text) {
  if (text == "none" || text == "w/o") return UpsampleStrategy::none;
  if (text == "nearest") return UpsampleStrategy::nearest;
  if (text == "bilinear") return UpsampleStrategy::bilinear;
  if (text == "pixel_shuffle" || text == "pixel-shuffle") return UpsampleStrategy::pixel_shuffle;
  throw ConfigError("unknown upsample strategy '" + text + "'");
}

MhimNorm parse_mhim_norm(const std::string& text) {
  if (text == "instance") return MhimNorm::instance;
  if (text == "layer") return MhimNorm::layer;
  if (text == "identity") return MhimNorm::identity;
  throw ConfigError("unknown MHIM norm '" + text + "'");
}

WindowStyle parse_window_style(const std::string& text) {
  if (text == "global") return WindowStyle::global;
  if (text == "win") return WindowStyle::win;
  if (text == "hwin") return WindowStyle::hwin;
  if (text == "cwin") return WindowStyle::cwin;
  throw ConfigError("unknown window style '" + text + "'");
}

void EmsaConfig::validate() const {
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " is not divisible into " + std::to_string(heads) +
                      " heads");
  }
  if (reduction != 1 && reduction != 2 && reduction != 4 && reduction != 8) {
    throw ConfigError("reduction ratio " + std::to_string(reduction) + " not in {1, 2, 4, 8}");
  }
  if (window != WindowStyle::global && window_size == 0) {
    throw ConfigError("windowed style " + to_string(window) + " needs a positive window size");
  }
}

Spatial EmsaConfig::reduced(Spatial full) const {
  if (reduction == 1) return full;
  const std::size_t k = reduction + 1, pad = reduction / 2;
  return Spatial{conv_out_extent(full.height, k, reduction, pad), conv_out_extent(full.width, k, reduction, pad)};
}

namespace {

template <typename T>
void expect_shape(const Tensor<T>& t, const Shape& shape, const char* name) {
  if (!t.defined()) throw DimensionError(std::string("attention weight '") + name + "' is missing");
  if (t.shape() != shape) {
    throw DimensionError(std::string("attention weight '") + name + "' has shape " + shape_str(t.shape()) +
                         ", expected " + shape_str(shape));
  }
}

// (B, n, d) -> (B, k, n, d_k)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  return permute(reshape(x, Shape{b, n, heads, d / heads}), {0, 2, 1, 3});
}

// (B, k, n, d_k) -> (B, n, d)
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t b = x.dim(0), k = x.dim(1), n = x.dim(2), dk = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), Shape{b, n, k * dk});
}

template <typename T>
void check_layout(const Tensor<T>& x, const EmsaConfig& cfg, Spatial spatial) {
  if (x.rank() != 3) throw LayoutError("attention input must be (B, n, d), got " + shape_str(x.shape()));
  if (x.dim(1) != spatial.tokens()) {
    throw LayoutError("attention input has n = " + std::to_string(x.dim(1)) + " tokens but spatial extents " +
                      std::to_string(spatial.height) + "x" + std::to_string(spatial.width));
  }
  if (x.dim(2) != cfg.dim) {
    throw DimensionError("attention input channel " + std::to_string(x.dim(2)) + " != configured dim " +
                         std::to_string(cfg.dim));
  }
}

// x' = LN(DWConv(x)) in token form; x itself when r == 1.
template <typename T>
Tensor<T> downsample_tokens(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                            Spatial spatial) {
  if (cfg.reduction == 1) return x;
  const std::size_t r = cfg.reduction;
  const auto img = tokens_to_image(x, spatial.height, spatial.width);
  const auto down = conv2d(img, w.down_weight, OptTensor<T>(w.down_bias), Conv2dOptions{r, r / 2, cfg.dim});
  return layer_norm(image_to_tokens(down), w.down_gamma, w.down_beta);
}

}  // namespace

template <typename T>
void AttentionWeights<T>::check(const EmsaConfig& cfg) const {
  cfg.validate();
  const std::size_t d = cfg.dim, r = cfg.reduction, k = cfg.heads;
  expect_shape(q_weight, {d, d}, "q_weight");
  expect_shape(q_bias, {d}, "q_bias");
  expect_shape(k_weight, {d, d}, "k_weight");
  expect_shape(k_bias, {d}, "k_bias");
  expect_shape(v_weight, {d, d}, "v_weight");
  expect_shape(v_bias, {d}, "v_bias");
  expect_shape(proj_weight, {d, d}, "proj_weight");
  expect_shape(proj_bias, {d}, "proj_bias");
  if (r > 1) {
    expect_shape(down_weight, {d, 1, r + 1, r + 1}, "down_weight");
    expect_shape(down_bias, {d}, "down_bias");
    expect_shape(down_gamma, {d}, "down_gamma");
    expect_shape(down_beta, {d}, "down_beta");
  }
  if (cfg.upsample == UpsampleStrategy::pixel_shuffle) {
    expect_shape(up_weight, {d * r * r, 1, 3, 3}, "up_weight");
    expect_shape(up_bias, {d * r * r}, "up_bias");
  }
  if (cfg.mhim) {
    expect_shape(mhim_weight, {k, k, 1, 1}, "mhim_weight");
    expect_shape(mhim_bias, {k}, "mhim_bias");
  }
}

template <typename T>
AttentionWeights<T> random_attention_weights(const EmsaConfig& cfg, std::uint64_t seed, double stddev) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  auto make = [&](Shape shape) {
    std::vector<T> v(numel(shape));
    for (auto& e : v) e = static_cast<T>(normal(rng));
    return Tensor<T>(std::move(shape), std::move(v));
  };
  const std::size_t d = cfg.dim, r = cfg.reduction, k = cfg.heads;
  AttentionWeights<T> w;
  w.q_weight = make({d, d});
  w.q_bias = make({d});
  w.k_weight = make({d, d});
  w.k_bias = make({d});
  w.v_weight = make({d, d});
  w.v_bias = make({d});
  if (r > 1) {
    w.down_weight = make({d, 1, r + 1, r + 1});
    w.down_bias = make({d});
    std::vector<T> ones(d);
    for (auto& e : ones) e = static_cast<T>(1.0 + normal(rng));
    w.down_gamma = Tensor<T>({d}, std::move(ones));
    w.down_beta = make({d});
  }
  if (cfg.upsample == UpsampleStrategy::pixel_shuffle) {
    w.up_weight = make({d * r * r, 1, 3, 3});
    w.up_bias = make({d * r * r});
  }
  if (cfg.mhim) {
    w.mhim_weight = make({k, k, 1, 1});
    w.mhim_bias = make({k});
  }
  w.proj_weight = make({d, d});
  w.proj_bias = make({d});
  return w;
}

template <typename T>
Tensor<T> mhim_mix(const Tensor<T>& attn, const Tensor<T>& weight, const Tensor<T>& bias) {
  return conv2d(attn, weight, OptTensor<T>(bias), Conv2dOptions{});
}

template <typename T>
Tensor<T> mhim_reweight(const Tensor<T>& attn, MhimNorm norm_kind) {
  switch (norm_kind) {
    case MhimNorm::instance: return instance_norm(attn);
    case MhimNorm::layer: return channel_norm(attn);
    case MhimNorm::identity: return attn;
  }
  return attn;
}

template <typename T>
Tensor<T> mhim_apply(const Tensor<T>& attn, const Tensor<T>& weight, const Tensor<T>& bias, MhimNorm norm_kind) {
  return mhim_reweight(mhim_mix(attn, weight, bias), norm_kind);
}

template <typename T>
Tensor<T> upsample_branch(const Tensor<T>& v, const AttentionWeights<T>& w, const EmsaConfig& cfg, Spatial reduced,
                          Spatial full) {
  if (v.rank() != 3 || v.dim(1) != reduced.tokens()) {
    throw LayoutError("upsample_branch: value tensor " + shape_str(v.shape()) + " does not hold " +
                      std::to_string(reduced.height) + "x" + std::to_string(reduced.width) + " tokens");
  }
  const std::size_t r = cfg.reduction;
  if (reduced.height * r < full.height || reduced.width * r < full.width) {
    throw LayoutError("upsample_branch: reduced extents cannot cover the full map");
  }
  const std::size_t b = v.dim(0), d = v.dim(2);
  if (cfg.upsample == UpsampleStrategy::none) return Tensor<T>::zeros(Shape{b, full.tokens(), d});
  const auto img = tokens_to_image(v, reduced.height, reduced.width);
  Tensor<T> up;
  switch (cfg.upsample) {
    case UpsampleStrategy::nearest: up = upsample_nearest(img, r, full.height, full.width); break;
    case UpsampleStrategy::bilinear: up = upsample_bilinear(img, r, full.height, full.width); break;
    case UpsampleStrategy::pixel_shuffle: {
      const auto expanded = conv2d(img, w.up_weight, OptTensor<T>(w.up_bias), Conv2dOptions{1, 1, d});
      up = crop2d(pixel_shuffle(expanded, r), full.height, full.width);
      break;
    }
    case UpsampleStrategy::none: break;
  }
  return image_to_tokens(up);
}

template <typename T>
AttentionBranches<T> attention_branches(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                                        Spatial spatial) {
  cfg.validate();
  check_layout(x, cfg, spatial);
  const std::size_t k = cfg.heads;
  const auto q = split_heads(linear(x, w.q_weight, OptTensor<T>(w.q_bias)), k);
  const auto reduced_x = downsample_tokens(x, w, cfg, spatial);
  const Spatial reduced = cfg.reduced(spatial);
  const auto keys = split_heads(linear(reduced_x, w.k_weight, OptTensor<T>(w.k_bias)), k);
  const auto v_tokens = linear(reduced_x, w.v_weight, OptTensor<T>(w.v_bias));
  const auto values = split_heads(v_tokens, k);

  Tensor<T> logits;
  if (w.rpe_h.defined()) {
    logits = rpe_apply(q, keys, w.rpe_h, w.rpe_w);
  } else {
    const T inv_sqrt = T(1) / std::sqrt(T(cfg.head_dim()));
    logits = scale(matmul(q, transpose_last(keys)), inv_sqrt);
  }
  Tensor<T> attn;
  if (cfg.mhim) {
    attn = mhim_reweight(softmax(mhim_mix(logits, w.mhim_weight, w.mhim_bias), -1), cfg.norm_kind);
  } else {
    attn = softmax(logits, -1);
  }
  const auto context = merge_heads(matmul(attn, values));

  AttentionBranches<T> out;
  out.attention = linear(context, w.proj_weight, OptTensor<T>(w.proj_bias));
  out.values = v_tokens;
  out.reduced = reduced;
  if (cfg.upsample != UpsampleStrategy::none) {
    out.upsample = upsample_branch(v_tokens, w, cfg, reduced, spatial);
  }
  return out;
}

template <typename T>
Tensor<T> emsa_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg, Spatial spatial) {
  EmsaConfig plain = cfg;
  plain.upsample = UpsampleStrategy::none;
  return attention_branches(x, w, plain, spatial).attention;
}

template <typename T>
Tensor<T> emsav2_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg, Spatial spatial) {
  auto br = attention_branches(x, w, cfg, spatial);
  if (!br.upsample.defined()) return br.attention;
  return add(br.attention, br.upsample);
}

template <typename T>
Tensor<T> convnet_branch_forward(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                                 Spatial spatial) {
  cfg.validate();
  check_layout(x, cfg, spatial);
  const auto reduced_x = downsample_tokens(x, w, cfg, spatial);
  const auto v = linear(reduced_x, w.v_weight, OptTensor<T>(w.v_bias));
  EmsaConfig up_cfg = cfg;
  if (up_cfg.upsample == UpsampleStrategy::none) up_cfg.upsample = UpsampleStrategy::pixel_shuffle;
  const auto up = upsample_branch(v, w, up_cfg, cfg.reduced(spatial), spatial);
  return linear(up, w.proj_weight, OptTensor<T>(w.proj_bias));
}

template <typename T>
std::pair<Tensor<T>, PadMeta> window_partition(const Tensor<T>& x, Spatial spatial, std::size_t window) {
  if (window == 0) throw ConfigError("window size must be positive");
  if (x.rank() != 3 || x.dim(1) != spatial.tokens()) {
    throw LayoutError("window_partition: input " + shape_str(x.shape()) + " does not hold " +
                      std::to_string(spatial.height) + "x" + std::to_string(spatial.width) + " tokens");
  }
  PadMeta meta;
  meta.batch = x.dim(0);
  meta.original = spatial;
  meta.padded = Spatial{(spatial.height + window - 1) / window * window, (spatial.width + window - 1) / window * window};
  meta.window = window;
  const std::size_t d = x.dim(2), nwy = meta.windows_y(), nwx = meta.windows_x();
  auto idx = std::make_shared<std::vector<std::int64_t>>(meta.batch * meta.window_count() * window * window * d);
  std::size_t flat = 0;
  for (std::size_t b = 0; b < meta.batch; ++b)
    for (std::size_t wy = 0; wy < nwy; ++wy)
      for (std::size_t wx = 0; wx < nwx; ++wx)
        for (std::size_t y = 0; y < window; ++y)
          for (std::size_t xx = 0; xx < window; ++xx) {
            const std::size_t gy = wy * window + y, gx = wx * window + xx;
            const bool inside = gy < spatial.height && gx < spatial.width;
            const std::size_t token = (b * spatial.height + gy) * spatial.width + gx;
            for (std::size_t c = 0; c < d; ++c) {
              (*idx)[flat++] = inside ? static_cast<std::int64_t>(token * d + c) : -1;
            }
          }
  auto windows = gather(x, Shape{meta.batch * meta.window_count(), window * window, d}, idx);
  return {windows, meta};
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, const PadMeta& meta) {
  const std::size_t ws = meta.window;
  if (ws == 0 || meta.padded.height % ws != 0 || meta.padded.width % ws != 0 ||
      meta.padded.height < meta.original.height || meta.padded.width < meta.original.width) {
    throw LayoutError("window_merge: inconsistent padding metadata");
  }
  if (windows.rank() != 3 || windows.dim(0) != meta.batch * meta.window_count() || windows.dim(1) != ws * ws) {
    throw LayoutError("window_merge: windows " + shape_str(windows.shape()) + " do not match metadata (" +
                      std::to_string(meta.batch * meta.window_count()) + " windows of " + std::to_string(ws * ws) +
                      " tokens)");
  }
  const std::size_t d = windows.dim(2), nwx = meta.windows_x();
  const Spatial s = meta.original;
  auto idx = std::make_shared<std::vector<std::int64_t>>(meta.batch * s.tokens() * d);
  std::size_t flat = 0;
  for (std::size_t b = 0; b < meta.batch; ++b)
    for (std::size_t gy = 0; gy < s.height; ++gy)
      for (std::size_t gx = 0; gx < s.width; ++gx) {
        const std::size_t win = (b * meta.windows_y() + gy / ws) * nwx + gx / ws;
        const std::size_t token = win * ws * ws + (gy % ws) * ws + gx % ws;
        for (std::size_t c = 0; c < d; ++c) (*idx)[flat++] = static_cast<std::int64_t>(token * d + c);
      }
  return gather(windows, Shape{meta.batch, s.tokens(), d}, idx);
}

bool uses_windows(WindowStyle style, const StyleContext& ctx) {
  switch (style) {
    case WindowStyle::global: return false;
    case WindowStyle::win:
    case WindowStyle::cwin: return true;
    case WindowStyle::hwin: return !ctx.is_last_block;
  }
  return false;
}

template <typename T>
AttentionBranches<T> styled_attention_branches(const Tensor<T>& x, const AttentionWeights<T>& w,
                                               const EmsaConfig& cfg, Spatial spatial, const StyleContext& ctx) {
  cfg.validate();
  if (!uses_windows(cfg.window, ctx)) return attention_branches(x, w, cfg, spatial);
  const auto [windows, meta] = window_partition(x, spatial, cfg.window_size);
  const Spatial local{cfg.window_size, cfg.window_size};
  auto br = attention_branches(windows, w, cfg, local);
  br.attention = window_merge(br.attention, meta);
  if (br.upsample.defined()) br.upsample = window_merge(br.upsample, meta);
  return br;
}

template <typename T>
Tensor<T> styled_block_attention(const Tensor<T>& x, const AttentionWeights<T>& w, const EmsaConfig& cfg,
                                 Spatial spatial, const StyleContext& ctx) {
  auto br = styled_attention_branches(x, w, cfg, spatial, ctx);
  if (!br.upsample.defined()) return br.attention;
  return add(br.attention, br.upsample);
}

#define RESTV2_INSTANTIATE(T)                                                                                   \
  template struct AttentionWeights<T>;                                                                          \
  template AttentionWeights<T> random_attention_weights<T>(const EmsaConfig&, std::uint64_t, double);          \
  template AttentionBranches<T> attention_branches(const Tensor<T>&, const AttentionWeights<T>&,               \
                                                   const EmsaConfig&, Spatial);                                 \
  template Tensor<T> emsa_forward(const Tensor<T>&, const AttentionWeights<T>&, const EmsaConfig&, Spatial);   \
  template Tensor<T> upsample_branch(const Tensor<T>&, const AttentionWeights<T>&, const EmsaConfig&, Spatial,  \
                                     Spatial);                                                                  \
  template Tensor<T> emsav2_forward(const Tensor<T>&, const AttentionWeights<T>&, const EmsaConfig&, Spatial); \
  template Tensor<T> mhim_mix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mhim_reweight(const Tensor<T>&, MhimNorm);                                                 \
  template Tensor<T> mhim_apply(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, MhimNorm);               \
  template Tensor<T> convnet_branch_forward(const Tensor<T>&, const AttentionWeights<T>&, const EmsaConfig&,   \
                                            Spatial);                                                           \
  template std::pair<Tensor<T>, PadMeta> window_partition(const Tensor<T>&, Spatial, std::size_t);             \
  template Tensor<T> window_merge(const Tensor<T>&, const PadMeta&);                                            \
  template AttentionBranches<T> styled_attention_branches(const Tensor<T>&, const AttentionWeights<T>&,        \
                                                          const EmsaConfig&, Spatial, const StyleContext&);     \
  template Tensor<T> styled_block_attention(const Tensor<T>&, const AttentionWeights<T>&, const EmsaConfig&,   \
                                            Spatial, const StyleContext&);

RESTV2_INSTANTIATE(float)
RESTV2_INSTANTIATE(double)

#undef RESTV2_INSTANTIATE

}  // namespace restv2
