#include "restv2/model_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "restv2/errors.hpp"
#include "restv2/ops.hpp"

namespace restv2 {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::emsav2: return "emsav2";
    case Variant::emsa_only: return "emsa_only";
    case Variant::convnet_branch: return "convnet_branch";
  }
  return "emsav2";
}

Variant parse_variant(const std::string& text) {
  if (text == "emsav2") return Variant::emsav2;
  if (text == "emsa_only" || text == "emsa") return Variant::emsa_only;
  if (text == "convnet_branch" || text == "convnet") return Variant::convnet_branch;
  throw ConfigError("unknown variant '" + text + "'");
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (auto b : blocks) n += b;
  return n;
}

UpsampleStrategy ModelConfig::effective_upsample() const {
  if (variant == Variant::emsa_only) return UpsampleStrategy::none;
  if (variant == Variant::convnet_branch && upsample == UpsampleStrategy::none) return UpsampleStrategy::pixel_shuffle;
  return upsample;
}

EmsaConfig ModelConfig::attention_config(std::size_t stage) const {
  EmsaConfig c;
  c.dim = stage_channels(stage);
  c.heads = heads[stage];
  c.reduction = reductions[stage];
  c.upsample = effective_upsample();
  c.mhim = mhim && variant != Variant::convnet_branch;
  c.norm_kind = mhim_norm;
  c.window = style;
  c.window_size = window_sizes[stage];
  return c;
}

void ModelConfig::validate() const {
  if (base_channels < 2 || base_channels % 2 != 0) {
    throw ConfigError("base channel count must be even and >= 2, got " + std::to_string(base_channels));
  }
  if (in_channels == 0 || mlp_ratio == 0 || num_classes == 0) {
    throw ConfigError("in_channels, mlp_ratio and num_classes must be positive");
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    if (blocks[s] == 0) throw ConfigError("stage " + std::to_string(s) + " has no blocks");
    attention_config(s).validate();
  }
  if (pe == PeKind::rpe && style != WindowStyle::global) {
    throw ConfigError("relative position tables are sized for global attention; use style=global with pe=rpe");
  }
  if ((pe == PeKind::ape || pe == PeKind::rpe) && image_size < 32) {
    throw ConfigError("image_size must be >= 32 for table-based positional embeddings");
  }
}

ModelConfig preset(const std::string& raw) {
  std::string name = raw;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  ModelConfig c;
  c.name = name;
  auto tiny = [&] {
    c.base_channels = 96;
    c.heads = {1, 2, 4, 8};
    c.blocks = {1, 2, 6, 2};
  };
  if (name == "restv2-t") {
    tiny();
  } else if (name == "restv2-s") {
    tiny();
    c.blocks = {1, 2, 12, 2};
  } else if (name == "restv2-b") {
    tiny();
    c.blocks = {1, 3, 16, 3};
  } else if (name == "restv2-l") {
    c.base_channels = 128;
    c.heads = {2, 4, 8, 16};
    c.blocks = {2, 3, 16, 2};
  } else if (name == "restv2-lite") {
    c.base_channels = 64;
    c.heads = {1, 2, 4, 8};
    c.blocks = {2, 2, 2, 2};
  } else if (name == "restv2-t-wo-up" || name == "restv2-t-emsa") {
    tiny();
    c.variant = Variant::emsa_only;
  } else if (name == "restv2-t-nearest") {
    tiny();
    c.upsample = UpsampleStrategy::nearest;
  } else if (name == "restv2-t-bilinear") {
    tiny();
    c.upsample = UpsampleStrategy::bilinear;
  } else if (name == "restv2-t-nope") {
    tiny();
    c.pe = PeKind::none;
  } else if (name == "restv2-t-ape") {
    tiny();
    c.pe = PeKind::ape;
  } else if (name == "restv2-t-rpe") {
    tiny();
    c.pe = PeKind::rpe;
  } else if (name == "restv2-t-mhim") {
    tiny();
    c.mhim = true;
  } else if (name == "restv2-t-msa") {
    tiny();
    c.reductions = {1, 1, 1, 1};
    c.variant = Variant::emsa_only;
  } else if (name == "convnet") {
    tiny();
    c.variant = Variant::convnet_branch;
  } else if (name == "convnetv2") {
    tiny();
    c.blocks = {2, 3, 6, 2};
    c.variant = Variant::convnet_branch;
  } else if (name == "mini") {
    c.base_channels = 16;
    c.heads = {1, 2, 4, 8};
    c.blocks = {1, 1, 1, 1};
    c.num_classes = 2;
    c.image_size = 32;
  } else {
    throw ConfigError("unknown model preset '" + raw + "'");
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"restv2-t",       "restv2-s",      "restv2-b",      "restv2-l",      "restv2-lite",
          "restv2-t-wo-up", "restv2-t-nearest", "restv2-t-bilinear", "restv2-t-nope", "restv2-t-ape",
          "restv2-t-rpe",   "restv2-t-mhim", "restv2-t-msa",  "convnet",       "convnetv2",
          "mini"};
}

Spatial stem_extent(Spatial input) {
  auto half = [](std::size_t v) { return conv_out_extent(v, 3, 2, 1); };
  return Spatial{half(half(input.height)), half(half(input.width))};
}

std::array<Spatial, kStages> stage_extents(const ModelConfig&, Spatial input) {
  std::array<Spatial, kStages> out{};
  out[0] = stem_extent(input);
  for (std::size_t s = 1; s < kStages; ++s) {
    out[s] = Spatial{conv_out_extent(out[s - 1].height, 3, 2, 1), conv_out_extent(out[s - 1].width, 3, 2, 1)};
  }
  return out;
}

PeConfig pe_config(const ModelConfig& cfg) {
  PeConfig pc;
  pc.kind = cfg.pe;
  const auto ext = stage_extents(cfg, Spatial{cfg.image_size, cfg.image_size});
  for (std::size_t s = 0; s < kStages; ++s) {
    PeStage st;
    st.height = ext[s].height;
    st.width = ext[s].width;
    st.channels = cfg.stage_channels(s);
    st.heads = cfg.heads[s];
    st.reduction = cfg.reductions[s];
    st.blocks = cfg.blocks[s];
    pc.stages.push_back(st);
  }
  return pc;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
}

std::array<std::size_t, kStages> parse_quad(const std::string& key, const std::string& value) {
  std::array<std::size_t, kStages> out{};
  std::stringstream ss(value);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= kStages) throw ConfigError("config key '" + key + "' needs exactly 4 values");
    out[i++] = parse_count(key, trim(item));
  }
  if (i != kStages) throw ConfigError("config key '" + key + "' needs exactly 4 values");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::string join(const std::array<std::size_t, kStages>& a) {
  std::string s;
  for (std::size_t i = 0; i < kStages; ++i) {
    if (i) s += ",";
    s += std::to_string(a[i]);
  }
  return s;
}

}  // namespace

ModelConfig parse_config_text(const std::string& text) {
  ModelConfig c;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      const auto name = c.name;
      c = preset(value);
      if (name != "custom") c.name = name;
    } else if (key == "name") {
      c.name = value;
    } else if (key == "base_channels") {
      c.base_channels = parse_count(key, value);
    } else if (key == "heads") {
      c.heads = parse_quad(key, value);
    } else if (key == "blocks") {
      c.blocks = parse_quad(key, value);
    } else if (key == "reductions") {
      c.reductions = parse_quad(key, value);
    } else if (key == "window_sizes") {
      c.window_sizes = parse_quad(key, value);
    } else if (key == "pe") {
      c.pe = parse_pe_kind(value);
    } else if (key == "variant") {
      c.variant = parse_variant(value);
    } else if (key == "upsample") {
      c.upsample = parse_upsample(value);
    } else if (key == "mhim") {
      c.mhim = parse_bool(key, value);
    } else if (key == "mhim_norm") {
      c.mhim_norm = parse_mhim_norm(value);
    } else if (key == "style") {
      c.style = parse_window_style(value);
    } else if (key == "mlp_ratio") {
      c.mlp_ratio = parse_count(key, value);
    } else if (key == "num_classes") {
      c.num_classes = parse_count(key, value);
    } else if (key == "in_channels") {
      c.in_channels = parse_count(key, value);
    } else if (key == "image_size") {
      c.image_size = parse_count(key, value);
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string to_config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "name = " << c.name << "\n"
     << "base_channels = " << c.base_channels << "\n"
     << "heads = " << join(c.heads) << "\n"
     << "blocks = " << join(c.blocks) << "\n"
     << "reductions = " << join(c.reductions) << "\n"
     << "window_sizes = " << join(c.window_sizes) << "\n"
     << "pe = " << to_string(c.pe) << "\n"
     << "variant = " << to_string(c.variant) << "\n"
     << "upsample = " << to_string(c.upsample) << "\n"
     << "mhim = " << (c.mhim ? "true" : "false") << "\n"
     << "mhim_norm = " << to_string(c.mhim_norm) << "\n"
     << "style = " << to_string(c.style) << "\n"
     << "mlp_ratio = " << c.mlp_ratio << "\n"
     << "num_classes = " << c.num_classes << "\n"
     << "in_channels = " << c.in_channels << "\n"
     << "image_size = " << c.image_size << "\n";
  return os.str();
}

std::string block_prefix(std::size_t stage, std::size_t block) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

std::vector<ParamSpec> parameter_plan(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> plan;
  auto add = [&](std::string name, Shape shape, InitKind init, const char* group) {
    plan.push_back(ParamSpec{std::move(name), std::move(shape), init, group});
  };
  auto norm = [&](const std::string& prefix, std::size_t d, const char* group) {
    add(prefix + ".weight", {d}, InitKind::ones, group);
    add(prefix + ".bias", {d}, InitKind::zeros, group);
  };
  auto pa = [&](const std::string& prefix, std::size_t d) {
    if (cfg.pe != PeKind::pa) return;
    add(prefix + ".weight", {d, 1, 3, 3}, InitKind::conv_fan_out, "pos_embed");
    add(prefix + ".bias", {d}, InitKind::zeros, "pos_embed");
  };

  const std::size_t c = cfg.base_channels, half = c / 2;
  add("stem.conv1.weight", {half, cfg.in_channels, 3, 3}, InitKind::conv_fan_out, "stem");
  norm("stem.bn1", half, "stem");
  add("stem.conv2.weight", {c, half, 3, 3}, InitKind::conv_fan_out, "stem");
  norm("stem.bn2", c, "stem");
  add("stem.conv3.weight", {c, c, 1, 1}, InitKind::conv_fan_out, "stem");
  add("stem.conv3.bias", {c}, InitKind::zeros, "stem");
  pa("stem.pa", c);
  norm("stem.norm", c, "norm");

  const auto pe = pe_config(cfg);
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t d = cfg.stage_channels(s);
    const std::string sp = "stages." + std::to_string(s) + ".";
    if (s > 0) {
      add(sp + "embed.conv.weight", {d, cfg.stage_channels(s - 1), 3, 3}, InitKind::conv_fan_out, "patch_embed");
      add(sp + "embed.conv.bias", {d}, InitKind::zeros, "patch_embed");
      norm(sp + "embed.bn", d, "patch_embed");
      pa(sp + "embed.pa", d);
    }
    if (cfg.pe == PeKind::ape) {
      add(sp + "ape", {pe.stages[s].height * pe.stages[s].width, d}, InitKind::trunc_normal, "pos_embed");
    }
    const auto ac = cfg.attention_config(s);
    const std::size_t r = ac.reduction, k = ac.heads, dk = ac.head_dim();
    for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
      const std::string bp = block_prefix(s, b);
      norm(bp + "norm1", d, "norm");
      const bool attention = cfg.variant != Variant::convnet_branch;
      if (attention) {
        add(bp + "attn.q.weight", {d, d}, InitKind::trunc_normal, "attn_qkv");
        add(bp + "attn.q.bias", {d}, InitKind::zeros, "attn_qkv");
        add(bp + "attn.k.weight", {d, d}, InitKind::trunc_normal, "attn_qkv");
        add(bp + "attn.k.bias", {d}, InitKind::zeros, "attn_qkv");
      }
      add(bp + "attn.v.weight", {d, d}, InitKind::trunc_normal, "attn_qkv");
      add(bp + "attn.v.bias", {d}, InitKind::zeros, "attn_qkv");
      if (r > 1) {
        add(bp + "attn.down.weight", {d, 1, r + 1, r + 1}, InitKind::conv_fan_out, "attn_down");
        add(bp + "attn.down.bias", {d}, InitKind::zeros, "attn_down");
        norm(bp + "attn.down_norm", d, "attn_down");
      }
      if (ac.upsample == UpsampleStrategy::pixel_shuffle) {
        add(bp + "attn.up.weight", {d * r * r, 1, 3, 3}, InitKind::conv_fan_out, "attn_up");
        add(bp + "attn.up.bias", {d * r * r}, InitKind::zeros, "attn_up");
      }
      if (ac.mhim) {
        add(bp + "attn.mhim.weight", {k, k, 1, 1}, InitKind::conv_fan_out, "mhim");
        add(bp + "attn.mhim.bias", {k}, InitKind::zeros, "mhim");
      }
      if (attention && cfg.pe == PeKind::rpe) {
        add(bp + "attn.rpe_h", {k, pe.stages[s].key_height(), 1, dk}, InitKind::trunc_normal, "pos_embed");
        add(bp + "attn.rpe_w", {k, 1, pe.stages[s].key_width(), dk}, InitKind::trunc_normal, "pos_embed");
      }
      add(bp + "attn.proj.weight", {d, d}, InitKind::trunc_normal, "attn_proj");
      add(bp + "attn.proj.bias", {d}, InitKind::zeros, "attn_proj");
      norm(bp + "norm2", d, "norm");
      const std::size_t hidden = d * cfg.mlp_ratio;
      add(bp + "mlp.fc1.weight", {d, hidden}, InitKind::trunc_normal, "mlp");
      add(bp + "mlp.fc1.bias", {hidden}, InitKind::zeros, "mlp");
      add(bp + "mlp.fc2.weight", {hidden, d}, InitKind::trunc_normal, "mlp");
      add(bp + "mlp.fc2.bias", {d}, InitKind::zeros, "mlp");
    }
    if (cfg.style == WindowStyle::cwin) {
      add(sp + "cwin.weight", {d, 1, 7, 7}, InitKind::conv_fan_out, "cwin");
      add(sp + "cwin.bias", {d}, InitKind::zeros, "cwin");
    }
  }
  const std::size_t top = cfg.stage_channels(kStages - 1);
  norm("head.norm", top, "norm");
  add("head.fc.weight", {top, cfg.num_classes}, InitKind::trunc_normal, "head");
  add("head.fc.bias", {cfg.num_classes}, InitKind::zeros, "head");
  return plan;
}

}  // namespace restv2
