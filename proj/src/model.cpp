#include "restv2/model.hpp"

#include <cmath>
#include <random>

#include "restv2/errors.hpp"
#include "restv2/ops.hpp"
#include "restv2/positional.hpp"

namespace restv2 {

template <typename T>
void NamedWeights<T>::insert(std::string name, Tensor<T> tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
void NamedWeights<T>::replace(const std::string& name, Tensor<T> tensor) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  entries_[it->second].second = std::move(tensor);
}

template <typename T>
const Tensor<T>& NamedWeights<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t NamedWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
NamedWeights<T> NamedWeights<T>::with_grad() const {
  NamedWeights out;
  for (const auto& [name, t] : entries_) out.insert(name, t.detach(true));
  return out;
}

template <typename T>
void check_against_plan(const NamedWeights<T>& weights, const ModelConfig& cfg) {
  const auto plan = parameter_plan(cfg);
  for (const auto& spec : plan) {
    if (!weights.contains(spec.name)) throw DimensionError("parameter '" + spec.name + "' is missing");
    const auto& t = weights.at(spec.name);
    if (t.shape() != spec.shape) {
      throw DimensionError("parameter '" + spec.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                           shape_str(spec.shape));
    }
  }
  if (weights.size() != plan.size()) {
    for (const auto& [name, t] : weights.entries()) {
      bool known = false;
      for (const auto& spec : plan) known = known || spec.name == name;
      if (!known) throw DimensionError("parameter '" + name + "' is not part of the configuration");
    }
  }
}

template <typename T>
NamedWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  NamedWeights<T> out;
  for (const auto& spec : parameter_plan(cfg)) {
    std::vector<T> v(numel(spec.shape));
    switch (spec.init) {
      case InitKind::zeros: break;
      case InitKind::ones: std::fill(v.begin(), v.end(), T(1)); break;
      case InitKind::trunc_normal:
        for (auto& e : v) {
          double z = normal(rng);
          while (std::abs(z) > 2.0) z = normal(rng);
          e = static_cast<T>(0.02 * z);
        }
        break;
      case InitKind::conv_fan_out: {
        // (Cout, Cin/groups, kh, kw); depth-wise kernels (Cin/groups == 1)
        // count one output map per input channel.
        const std::size_t cout = spec.shape[0], cin_g = spec.shape[1], kk = spec.shape[2] * spec.shape[3];
        const double fan_out = static_cast<double>(cin_g == 1 ? kk : kk * cout);
        const double std = std::sqrt(2.0 / std::max(1.0, fan_out));
        for (auto& e : v) e = static_cast<T>(std * normal(rng));
        break;
      }
    }
    out.insert(spec.name, Tensor<T>(spec.shape, std::move(v)));
  }
  return out;
}

template <typename T>
NamedWeights<T> zero_residual_branches(const NamedWeights<T>& weights, const ModelConfig& cfg) {
  NamedWeights<T> out = weights;
  auto zero = [&](const std::string& name) {
    if (out.contains(name)) out.replace(name, Tensor<T>::zeros(out.at(name).shape()));
  };
  for (std::size_t s = 0; s < kStages; ++s) {
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      const auto p = block_prefix(s, b);
      for (const char* leaf : {"attn.v.weight", "attn.v.bias", "attn.up.bias", "attn.proj.weight", "attn.proj.bias",
                               "mlp.fc2.weight", "mlp.fc2.bias"}) {
        zero(p + leaf);
      }
    }
    zero("stages." + std::to_string(s) + ".cwin.weight");
    zero("stages." + std::to_string(s) + ".cwin.bias");
  }
  return out;
}

template <typename T>
Model<T>::Model(ModelConfig cfg, NamedWeights<T> weights) : cfg_(std::move(cfg)), weights_(std::move(weights)) {
  cfg_.validate();
  check_against_plan(weights_, cfg_);
}

template <typename T>
AttentionWeights<T> Model<T>::attention_weights(std::size_t stage, std::size_t block) const {
  const auto p = block_prefix(stage, block) + "attn.";
  auto opt = [&](const std::string& leaf) {
    return weights_.contains(p + leaf) ? weights_.at(p + leaf) : Tensor<T>();
  };
  AttentionWeights<T> a;
  a.q_weight = opt("q.weight");
  a.q_bias = opt("q.bias");
  a.k_weight = opt("k.weight");
  a.k_bias = opt("k.bias");
  a.v_weight = opt("v.weight");
  a.v_bias = opt("v.bias");
  a.down_weight = opt("down.weight");
  a.down_bias = opt("down.bias");
  a.down_gamma = opt("down_norm.weight");
  a.down_beta = opt("down_norm.bias");
  a.up_weight = opt("up.weight");
  a.up_bias = opt("up.bias");
  a.mhim_weight = opt("mhim.weight");
  a.mhim_bias = opt("mhim.bias");
  a.proj_weight = opt("proj.weight");
  a.proj_bias = opt("proj.bias");
  a.rpe_h = opt("rpe_h");
  a.rpe_w = opt("rpe_w");
  return a;
}

namespace {

template <typename T>
Tensor<T> pa_if(const ModelConfig& cfg, const NamedWeights<T>& weights, const std::string& prefix,
                const Tensor<T>& img) {
  if (cfg.pe != PeKind::pa) return img;
  return pa_apply(img, weights.at(prefix + ".weight"), weights.at(prefix + ".bias"));
}

}  // namespace

template <typename T>
FeatureMap<T> Model<T>::stem_forward(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw DimensionError("expected images (B, " + std::to_string(cfg_.in_channels) + ", H, W), got " +
                         shape_str(images.shape()));
  }
  if (images.dim(2) < 32 || images.dim(3) < 32) {
    throw DimensionError("input extents " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                         " are below the 32x32 minimum");
  }
  auto x = conv2d(images, w("stem.conv1.weight"), OptTensor<T>(), Conv2dOptions{2, 1, 1});
  x = relu(channel_affine(x, w("stem.bn1.weight"), w("stem.bn1.bias")));
  x = conv2d(x, w("stem.conv2.weight"), OptTensor<T>(), Conv2dOptions{2, 1, 1});
  x = relu(channel_affine(x, w("stem.bn2.weight"), w("stem.bn2.bias")));
  x = conv2d(x, w("stem.conv3.weight"), OptTensor<T>(w("stem.conv3.bias")), Conv2dOptions{});
  x = pa_if(cfg_, weights_, "stem.pa", x);
  const Spatial s{x.dim(2), x.dim(3)};
  auto tokens = layer_norm(image_to_tokens(x), w("stem.norm.weight"), w("stem.norm.bias"));
  return FeatureMap<T>{tokens, s};
}

template <typename T>
FeatureMap<T> Model<T>::patch_embed_forward(std::size_t stage, const FeatureMap<T>& in) const {
  if (stage == 0 || stage >= kStages) throw ConfigError("patch embedding exists only for stages 1..3");
  const std::string p = "stages." + std::to_string(stage) + ".embed.";
  auto x = tokens_to_image(in.tokens, in.spatial.height, in.spatial.width);
  x = conv2d(x, w(p + "conv.weight"), OptTensor<T>(w(p + "conv.bias")), Conv2dOptions{2, 1, 1});
  x = channel_affine(x, w(p + "bn.weight"), w(p + "bn.bias"));
  x = pa_if(cfg_, weights_, p + "pa", x);
  return FeatureMap<T>{image_to_tokens(x), Spatial{x.dim(2), x.dim(3)}};
}

template <typename T>
Tensor<T> Model<T>::block_forward(std::size_t stage, std::size_t block, const FeatureMap<T>& in,
                                  BlockTrace<T>* trace) const {
  const auto p = block_prefix(stage, block);
  const auto acfg = cfg_.attention_config(stage);
  const auto aw = attention_weights(stage, block);
  const auto h = layer_norm(in.tokens, w(p + "norm1.weight"), w(p + "norm1.bias"));

  Tensor<T> attention, upsample, combined;
  if (cfg_.variant == Variant::convnet_branch) {
    combined = convnet_branch_forward(h, aw, acfg, in.spatial);
    upsample = combined;
  } else {
    const StyleContext ctx{stage, block, block + 1 == cfg_.blocks[stage]};
    auto br = styled_attention_branches(h, aw, acfg, in.spatial, ctx);
    attention = br.attention;
    upsample = br.upsample;
    combined = upsample.defined() ? add(attention, upsample) : attention;
  }
  const auto x = add(in.tokens, combined);
  auto m = layer_norm(x, w(p + "norm2.weight"), w(p + "norm2.bias"));
  m = gelu(linear(m, w(p + "mlp.fc1.weight"), OptTensor<T>(w(p + "mlp.fc1.bias"))));
  m = linear(m, w(p + "mlp.fc2.weight"), OptTensor<T>(w(p + "mlp.fc2.bias")));
  auto out = add(x, m);
  if (trace) {
    trace->stage = stage;
    trace->block = block;
    trace->spatial = in.spatial;
    trace->attention = attention;
    trace->upsample = upsample;
    trace->combined = combined;
    trace->output = out;
  }
  return out;
}

template <typename T>
FeatureMap<T> Model<T>::stage_forward(std::size_t stage, const FeatureMap<T>& in, ForwardTrace<T>* trace) const {
  const std::string sp = "stages." + std::to_string(stage) + ".";
  FeatureMap<T> x = in;
  if (cfg_.pe == PeKind::ape) x.tokens = ape_apply(x.tokens, w(sp + "ape"));
  for (std::size_t b = 0; b < cfg_.blocks[stage]; ++b) {
    BlockTrace<T> bt;
    x.tokens = block_forward(stage, b, x, trace ? &bt : nullptr);
    if (trace) trace->blocks.push_back(std::move(bt));
  }
  if (cfg_.style == WindowStyle::cwin) {
    const auto img = tokens_to_image(x.tokens, x.spatial.height, x.spatial.width);
    const auto conv =
        conv2d(img, w(sp + "cwin.weight"), OptTensor<T>(w(sp + "cwin.bias")), Conv2dOptions{1, 3, img.dim(1)});
    x.tokens = add(x.tokens, image_to_tokens(conv));
  }
  if (trace) trace->stages.push_back(x);
  return x;
}

template <typename T>
FeatureMap<T> Model<T>::trunk(const Tensor<T>& images, ForwardTrace<T>* trace) const {
  auto x = stem_forward(images);
  for (std::size_t s = 0; s < kStages; ++s) {
    if (s > 0) x = patch_embed_forward(s, x);
    x = stage_forward(s, x, trace);
  }
  return x;
}

template <typename T>
Tensor<T> Model<T>::head_forward(const FeatureMap<T>& x) const {
  auto t = layer_norm(x.tokens, w("head.norm.weight"), w("head.norm.bias"));
  auto pooled = avg_pool_global(tokens_to_image(t, x.spatial.height, x.spatial.width));
  return linear(pooled, w("head.fc.weight"), OptTensor<T>(w("head.fc.bias")));
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, ForwardTrace<T>* trace) const {
  return head_forward(trunk(images, trace));
}

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, init_weights<T>(cfg, seed));
}

template <typename T>
Tensor<T> synthetic_images(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<T> v(batch * channels * height * width);
  for (auto& e : v) e = static_cast<T>(static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0);
  return Tensor<T>({batch, channels, height, width}, std::move(v));
}

#define RESTV2_INSTANTIATE(T)                                                                          \
  template class NamedWeights<T>;                                                                      \
  template class Model<T>;                                                                             \
  template void check_against_plan(const NamedWeights<T>&, const ModelConfig&);                       \
  template NamedWeights<T> init_weights<T>(const ModelConfig&, std::uint64_t);                        \
  template NamedWeights<T> zero_residual_branches(const NamedWeights<T>&, const ModelConfig&);        \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                                \
  template Tensor<T> synthetic_images<T>(std::size_t, std::size_t, std::size_t, std::size_t, std::uint64_t);

RESTV2_INSTANTIATE(float)
RESTV2_INSTANTIATE(double)

#undef RESTV2_INSTANTIATE

}  // namespace restv2
