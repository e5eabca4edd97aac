#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "restv2/attention.hpp"
#include "restv2/positional.hpp"
#include "restv2/tensor.hpp"

namespace restv2 {

inline constexpr std::size_t kStages = 4;

enum class Variant { emsav2, emsa_only, convnet_branch };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

/// Four-stage architecture description.
struct ModelConfig {
  std::string name = "custom";
  std::size_t base_channels = 96;
  std::array<std::size_t, kStages> heads{1, 2, 4, 8};
  std::array<std::size_t, kStages> blocks{1, 2, 6, 2};
  std::array<std::size_t, kStages> reductions{8, 4, 2, 1};
  std::array<std::size_t, kStages> window_sizes{64, 32, 16, 8};
  PeKind pe = PeKind::pa;
  Variant variant = Variant::emsav2;
  UpsampleStrategy upsample = UpsampleStrategy::pixel_shuffle;
  bool mhim = false;
  MhimNorm mhim_norm = MhimNorm::instance;
  WindowStyle style = WindowStyle::global;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 1000;
  std::size_t in_channels = 3;
  /// Input extent the APE/RPE tables are sized for.
  std::size_t image_size = 224;

  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
  std::size_t total_blocks() const;
  /// Upsample strategy actually used by blocks (none for emsa_only).
  UpsampleStrategy effective_upsample() const;
  EmsaConfig attention_config(std::size_t stage) const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Built-in configurations: restv2-t/s/b/l/lite plus the ablation variants.
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Spatial extents after the stem (index 0) and each stage transition.
std::array<Spatial, kStages> stage_extents(const ModelConfig& cfg, Spatial input);
Spatial stem_extent(Spatial input);

/// Positional-embedding geometry at cfg.image_size.
PeConfig pe_config(const ModelConfig& cfg);

/// Plain-text `key = value` form; '#' starts a comment.
ModelConfig parse_config_text(const std::string& text);
ModelConfig load_config_file(const std::string& path);
std::string to_config_text(const ModelConfig& cfg);

enum class InitKind { trunc_normal, conv_fan_out, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
  /// Reporting bucket: stem, patch_embed, pos_embed, attn_qkv, attn_down,
  /// attn_up, attn_proj, mhim, norm, mlp, cwin, head.
  std::string group;
};

/// Every learnable tensor implied by the configuration, in a fixed order.
std::vector<ParamSpec> parameter_plan(const ModelConfig& cfg);

std::string block_prefix(std::size_t stage, std::size_t block);

}  // namespace restv2
