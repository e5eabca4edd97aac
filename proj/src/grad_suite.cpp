#include "restv2/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "restv2/attention.hpp"
#include "restv2/model.hpp"
#include "restv2/ops.hpp"
#include "restv2/positional.hpp"

namespace restv2 {

namespace {

using Fn = std::function<TensorD(const std::vector<TensorD>&)>;

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  TensorD normal(Shape shape, double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(numel(shape));
    for (auto& e : v) e = d(rng_);
    return TensorD(std::move(shape), std::move(v));
  }
  /// Values with |x| >= margin, for ops with a kink at zero.
  TensorD away_from_zero(Shape shape, double margin) {
    std::uniform_real_distribution<double> mag(margin, 1.5);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(numel(shape));
    for (auto& e : v) e = sign(rng_) ? mag(rng_) : -mag(rng_);
    return TensorD(std::move(shape), std::move(v));
  }
  TensorD positive(Shape shape) {
    std::uniform_real_distribution<double> d(0.5, 1.5);
    std::vector<double> v(numel(shape));
    for (auto& e : v) e = d(rng_);
    return TensorD(std::move(shape), std::move(v));
  }

 private:
  std::mt19937_64 rng_;
};

AttentionWeights<double> attention_from(const std::vector<TensorD>& in, std::size_t first) {
  AttentionWeights<double> w;
  std::size_t i = first;
  for (Tensor<double>* slot : {&w.q_weight, &w.q_bias, &w.k_weight, &w.k_bias, &w.v_weight, &w.v_bias,
                               &w.down_weight, &w.down_bias, &w.down_gamma, &w.down_beta, &w.up_weight, &w.up_bias,
                               &w.mhim_weight, &w.mhim_bias, &w.proj_weight, &w.proj_bias}) {
    *slot = in[i++];
  }
  return w;
}

std::vector<TensorD> attention_tensors(const AttentionWeights<double>& w) {
  return {w.q_weight,  w.q_bias,     w.k_weight,   w.k_bias,    w.v_weight,    w.v_bias,
          w.down_weight, w.down_bias, w.down_gamma, w.down_beta, w.up_weight,   w.up_bias,
          w.mhim_weight, w.mhim_bias, w.proj_weight, w.proj_bias};
}

std::vector<std::string> attention_names() {
  return {"q_weight",  "q_bias",    "k_weight",   "k_bias",    "v_weight",    "v_bias",
          "down_weight", "down_bias", "down_gamma", "down_beta", "up_weight",   "up_bias",
          "mhim_weight", "mhim_bias", "proj_weight", "proj_bias"};
}

}  // namespace

std::vector<SuiteCase> op_gradient_suite(std::uint64_t seed) {
  Inputs gen(seed);
  std::vector<SuiteCase> cases;
  auto run = [&](std::string name, const Fn& fn, std::vector<TensorD> inputs) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < inputs.size(); ++i) names.push_back(name + "[" + std::to_string(i) + "]");
    cases.push_back(SuiteCase{std::move(name), check_gradients(fn, inputs, names)});
  };

  run("add", [](const auto& in) { return add(in[0], in[1]); }, {gen.normal({2, 3}), gen.normal({2, 3})});
  run("add_broadcast", [](const auto& in) { return add_broadcast(in[0], in[1]); },
      {gen.normal({2, 3, 4}), gen.normal({3, 4})});
  run("mul", [](const auto& in) { return mul(in[0], in[1]); }, {gen.normal({2, 5}), gen.normal({2, 5})});
  run("scale", [](const auto& in) { return scale(in[0], 0.37); }, {gen.normal({4, 3})});
  run("sum", [](const auto& in) { return sum(in[0]); }, {gen.normal({3, 4})});
  run("reshape", [](const auto& in) { return reshape(in[0], Shape{6, 2}); }, {gen.normal({3, 4})});
  run("permute", [](const auto& in) { return permute(in[0], {2, 0, 1}); }, {gen.normal({2, 3, 4})});
  run("transpose_last", [](const auto& in) { return transpose_last(in[0]); }, {gen.normal({2, 3, 4})});
  {
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{5, 0, -1, 3, 3, 1, 2, -1});
    run("gather", [idx](const auto& in) { return gather(in[0], Shape{2, 4}, idx); }, {gen.normal({6})});
  }
  run("matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {gen.normal({2, 3, 4}), gen.normal({2, 4, 5})});
  run("linear", [](const auto& in) { return linear(in[0], in[1], OptTensor<double>(in[2])); },
      {gen.normal({2, 3, 4}), gen.normal({4, 5}), gen.normal({5})});
  run("softmax_last", [](const auto& in) { return softmax(in[0], -1); }, {gen.normal({2, 3, 5})});
  run("softmax_mid", [](const auto& in) { return softmax(in[0], 1); }, {gen.normal({2, 4, 3})});
  run("layer_norm", [](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
      {gen.normal({2, 3, 6}), gen.normal({6}), gen.normal({6})});
  run("instance_norm", [](const auto& in) { return instance_norm(in[0]); }, {gen.normal({2, 3, 3, 4})});
  run("channel_norm", [](const auto& in) { return channel_norm(in[0]); }, {gen.normal({2, 4, 3, 3})});
  run("channel_affine", [](const auto& in) { return channel_affine(in[0], in[1], in[2]); },
      {gen.normal({2, 3, 2, 2}), gen.normal({3}), gen.normal({3})});
  run("conv2d_dense", [](const auto& in) { return conv2d(in[0], in[1], OptTensor<double>(in[2]), {2, 1, 1}); },
      {gen.normal({2, 3, 5, 6}), gen.normal({4, 3, 3, 3}), gen.normal({4})});
  run("conv2d_depthwise", [](const auto& in) { return conv2d(in[0], in[1], OptTensor<double>(in[2]), {2, 1, 3}); },
      {gen.normal({1, 3, 6, 5}), gen.normal({6, 1, 3, 3}), gen.normal({6})});
  run("conv2d_grouped_nobias", [](const auto& in) { return conv2d(in[0], in[1], OptTensor<double>(), {1, 0, 2}); },
      {gen.normal({1, 4, 4, 4}), gen.normal({2, 2, 2, 2})});
  run("gelu", [](const auto& in) { return gelu(in[0]); }, {gen.normal({3, 5})});
  run("sigmoid", [](const auto& in) { return sigmoid(in[0]); }, {gen.normal({3, 5}, 3.0)});
  run("relu", [](const auto& in) { return relu(in[0]); }, {gen.away_from_zero({3, 5}, 0.05)});
  run("pixel_shuffle", [](const auto& in) { return pixel_shuffle(in[0], 2); }, {gen.normal({1, 8, 2, 3})});
  run("pixel_unshuffle", [](const auto& in) { return pixel_unshuffle(in[0], 2); }, {gen.normal({1, 2, 4, 6})});
  run("avg_pool_global", [](const auto& in) { return avg_pool_global(in[0]); }, {gen.normal({2, 3, 3, 2})});
  run("upsample_nearest", [](const auto& in) { return upsample_nearest(in[0], 2, 5, 6); }, {gen.normal({1, 2, 3, 3})});
  run("upsample_bilinear", [](const auto& in) { return upsample_bilinear(in[0], 2, 5, 6); },
      {gen.normal({1, 2, 3, 3})});
  run("crop2d", [](const auto& in) { return crop2d(in[0], 2, 3); }, {gen.normal({1, 2, 4, 4})});
  run("tokens_to_image", [](const auto& in) { return tokens_to_image(in[0], 2, 3); }, {gen.normal({2, 6, 4})});
  run("image_to_tokens", [](const auto& in) { return image_to_tokens(in[0]); }, {gen.normal({2, 4, 2, 3})});

  run("ape_apply", [](const auto& in) { return ape_apply(in[0], in[1]); }, {gen.normal({2, 6, 4}), gen.normal({6, 4})});
  run("rpe_apply", [](const auto& in) { return rpe_apply(in[0], in[1], in[2], in[3]); },
      {gen.normal({1, 2, 5, 3}), gen.normal({1, 2, 6, 3}), gen.normal({2, 2, 1, 3}), gen.normal({2, 1, 3, 3})});
  run("pa_apply", [](const auto& in) { return pa_apply(in[0], in[1], in[2]); },
      {gen.normal({1, 3, 4, 5}), gen.normal({3, 1, 3, 3}), gen.normal({3})});

  // Attention blocks on a 5x6 map, covering non-divisible extents.
  const Spatial sp{5, 6};
  // Normalizing across two heads is close to a sign function, so the
  // layer-norm interaction runs with four.
  for (auto [name, upsample, mhim, norm, reduction, heads] :
       {std::tuple{"emsav2_pixel_shuffle", UpsampleStrategy::pixel_shuffle, false, MhimNorm::instance, 2ul, 2ul},
        std::tuple{"emsav2_bilinear", UpsampleStrategy::bilinear, false, MhimNorm::instance, 4ul, 2ul},
        std::tuple{"emsav2_nearest", UpsampleStrategy::nearest, false, MhimNorm::instance, 2ul, 2ul},
        std::tuple{"emsa_r1", UpsampleStrategy::none, false, MhimNorm::instance, 1ul, 2ul},
        std::tuple{"emsav2_mhim_instance", UpsampleStrategy::pixel_shuffle, true, MhimNorm::instance, 2ul, 2ul},
        std::tuple{"emsav2_mhim_layer", UpsampleStrategy::pixel_shuffle, true, MhimNorm::layer, 2ul, 4ul}}) {
    EmsaConfig cfg;
    cfg.dim = 2 * heads;
    cfg.heads = heads;
    cfg.reduction = reduction;
    cfg.upsample = upsample;
    cfg.mhim = mhim;
    cfg.norm_kind = norm;
    const auto w = random_attention_weights<double>(cfg, seed + cases.size(), 0.5);
    std::vector<TensorD> inputs{gen.normal({1, sp.tokens(), cfg.dim})};
    std::vector<std::string> names{std::string(name) + ".x"};
    const auto tensors = attention_tensors(w);
    const auto tnames = attention_names();
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!tensors[i].defined()) continue;
      slots.push_back(i);
      inputs.push_back(tensors[i]);
      names.push_back(std::string(name) + "." + tnames[i]);
    }
    Fn fn = [cfg, sp, slots](const std::vector<TensorD>& in) {
      std::vector<TensorD> full(16);
      for (std::size_t j = 0; j < slots.size(); ++j) full[slots[j]] = in[j + 1];
      return emsav2_forward(in[0], attention_from(full, 0), cfg, sp);
    };
    // Softmax over mixed heads is steep at this weight scale: 1e-3 leaves
    // truncation error near 1e-4 and 1e-5 leaves roundoff of the same size.
    GradCheckOptions options;
    options.step = 1e-4;
    cases.push_back(SuiteCase{name, check_gradients(fn, inputs, names, options)});
  }
  {
    EmsaConfig cfg;
    cfg.dim = 4;
    cfg.heads = 1;
    cfg.reduction = 2;
    cfg.window = WindowStyle::win;
    cfg.window_size = 4;
    const auto w = random_attention_weights<double>(cfg, seed + 99, 0.5);
    Fn fn = [cfg, w, sp](const std::vector<TensorD>& in) {
      return styled_block_attention(in[0], w, cfg, sp, StyleContext{});
    };
    cases.push_back(SuiteCase{"windowed_attention", check_gradients(fn, {gen.normal({1, sp.tokens(), 4})}, {"x"})});
  }
  return cases;
}

SuiteCase mini_model_gradcheck(std::uint64_t seed, std::size_t samples_per_tensor) {
  const auto cfg = preset("mini");
  const auto base = init_weights<double>(cfg, seed);
  // Non-trivial biases and affine terms so every gradient path is exercised.
  NamedWeights<double> weights;
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (const auto& [name, t] : base.entries()) {
    std::vector<double> v = t.values();
    for (auto& e : v) e += jitter(rng);
    weights.insert(name, TensorD(t.shape(), std::move(v)));
  }
  const auto image = synthetic_images<double>(1, cfg.in_channels, 32, 32, seed + 2);

  std::vector<TensorD> inputs{image};
  std::vector<std::string> names{"image"};
  for (const auto& [name, t] : weights.entries()) {
    inputs.push_back(t);
    names.push_back(name);
  }
  Fn fn = [cfg, names](const std::vector<TensorD>& in) {
    NamedWeights<double> w;
    for (std::size_t i = 1; i < in.size(); ++i) w.insert(names[i], in[i]);
    return Model<double>(cfg, std::move(w)).forward(in[0]);
  };
  GradCheckOptions options;
  // The stem ReLUs are kinked; a small step keeps perturbations from
  // crossing a kink.
  options.step = 1e-5;
  options.samples_per_input = samples_per_tensor;
  options.seed = seed;
  return SuiteCase{"mini_model", check_gradients(fn, inputs, names, options)};
}

double suite_max_error(const std::vector<SuiteCase>& cases) {
  double worst = 0;
  for (const auto& c : cases) worst = std::max(worst, c.result.max_rel_error());
  return worst;
}

}  // namespace restv2
