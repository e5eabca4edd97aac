#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "restv2/attention.hpp"
#include "restv2/model_config.hpp"
#include "restv2/tensor.hpp"

namespace restv2 {

/// Insertion-ordered name -> tensor map.
template <typename T>
class NamedWeights {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  /// Throws ConfigError on a duplicate name.
  void insert(std::string name, Tensor<T> tensor);
  /// Replaces an existing entry; throws ConfigError if absent.
  void replace(const std::string& name, Tensor<T> tensor);
  /// Throws ConfigError naming the missing parameter.
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t parameter_count() const;

  template <typename U>
  NamedWeights<U> cast() const {
    NamedWeights<U> out;
    for (const auto& [name, t] : entries_) out.insert(name, t.template cast<U>());
    return out;
  }

  /// Same names, values detached into fresh leaves that require grad.
  NamedWeights with_grad() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws DimensionError naming the first parameter whose presence or shape
/// disagrees with parameter_plan(cfg).
template <typename T>
void check_against_plan(const NamedWeights<T>& weights, const ModelConfig& cfg);

/// Deterministic initialization from `seed`.
template <typename T>
NamedWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Zeroes every block's V projection, up-branch bias, out_proj and second
/// MLP linear, which turns each block into the identity map.
template <typename T>
NamedWeights<T> zero_residual_branches(const NamedWeights<T>& weights, const ModelConfig& cfg);

/// Token-form activation with its spatial extents.
template <typename T>
struct FeatureMap {
  Tensor<T> tokens;  // (B, H*W, C)
  Spatial spatial;
};

/// Per-block intermediate values captured during a forward pass.
template <typename T>
struct BlockTrace {
  std::size_t stage = 0;
  std::size_t block = 0;
  Spatial spatial;
  Tensor<T> attention;  // attention term (B, n, d)
  Tensor<T> upsample;   // Up(V) term; undefined without an upsample branch
  Tensor<T> combined;   // sum of the two terms added to the residual stream
  Tensor<T> output;     // block output
};

template <typename T>
struct ForwardTrace {
  std::vector<BlockTrace<T>> blocks;
  std::vector<FeatureMap<T>> stages;  // stage outputs
};

template <typename T>
class Model {
 public:
  /// Validates `weights` against the configuration's parameter plan.
  Model(ModelConfig cfg, NamedWeights<T> weights);

  const ModelConfig& config() const { return cfg_; }
  const NamedWeights<T>& weights() const { return weights_; }
  std::size_t parameter_count() const { return weights_.parameter_count(); }

  /// images (B, in_channels, H, W) -> logits (B, num_classes). H, W >= 32.
  Tensor<T> forward(const Tensor<T>& images, ForwardTrace<T>* trace = nullptr) const;
  /// Stem and stages only; returns the last stage's feature map.
  FeatureMap<T> trunk(const Tensor<T>& images, ForwardTrace<T>* trace = nullptr) const;

  FeatureMap<T> stem_forward(const Tensor<T>& images) const;
  /// Stage transition into `stage` (1..3) from the previous stage's output.
  FeatureMap<T> patch_embed_forward(std::size_t stage, const FeatureMap<T>& x) const;
  FeatureMap<T> stage_forward(std::size_t stage, const FeatureMap<T>& x, ForwardTrace<T>* trace = nullptr) const;
  Tensor<T> block_forward(std::size_t stage, std::size_t block, const FeatureMap<T>& x,
                          BlockTrace<T>* trace = nullptr) const;
  Tensor<T> head_forward(const FeatureMap<T>& x) const;

  AttentionWeights<T> attention_weights(std::size_t stage, std::size_t block) const;

 private:
  const Tensor<T>& w(const std::string& name) const { return weights_.at(name); }

  ModelConfig cfg_;
  NamedWeights<T> weights_;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Deterministic pseudo-image in [-1, 1) for demos, tests and benchmarks.
template <typename T>
Tensor<T> synthetic_images(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
                           std::uint64_t seed);

}  // namespace restv2
