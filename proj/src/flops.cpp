#include "restv2/flops.hpp"

#include "restv2/ops.hpp"

namespace restv2 {

namespace {

using u64 = std::uint64_t;

u64 conv_macs(u64 cout, u64 cin_g, u64 k, Spatial out) { return cout * cin_g * k * k * out.height * out.width; }

Spatial conv_extent(Spatial in, std::size_t k, std::size_t stride, std::size_t pad) {
  return Spatial{conv_out_extent(in.height, k, stride, pad), conv_out_extent(in.width, k, stride, pad)};
}

// Attention on `batch` independent maps of extent `spatial`.
FlopTally attention_macs(const EmsaConfig& cfg, Spatial spatial, u64 batch) {
  FlopTally t;
  const u64 d = cfg.dim, k = cfg.heads, dk = cfg.head_dim(), r = cfg.reduction;
  const u64 n = spatial.tokens();
  const Spatial red = cfg.reduced(spatial);
  const u64 nr = red.tokens();
  t.linear += batch * n * d * d;  // q
  if (r > 1) {
    t.conv += batch * conv_macs(d, 1, r + 1, red);
    t.other += batch * nr * d;  // layer norm of the reduced map
  }
  t.linear += 2 * batch * nr * d * d;  // k, v
  t.matmul += batch * k * n * dk * nr;  // Q K^T
  if (cfg.mhim) {
    t.conv += batch * k * k * n * nr;
    if (cfg.norm_kind != MhimNorm::identity) t.other += batch * k * n * nr;
  }
  t.other += batch * k * n * nr;        // softmax
  t.matmul += batch * k * n * nr * dk;  // attn V
  t.linear += batch * n * d * d;        // out_proj
  switch (cfg.upsample) {
    case UpsampleStrategy::none: break;
    case UpsampleStrategy::nearest:
    case UpsampleStrategy::bilinear: t.other += batch * d * n; break;
    case UpsampleStrategy::pixel_shuffle: t.conv += batch * conv_macs(d * r * r, 1, 3, red); break;
  }
  return t;
}

FlopTally convnet_macs(const EmsaConfig& cfg, Spatial spatial) {
  FlopTally t;
  const u64 d = cfg.dim, r = cfg.reduction, n = spatial.tokens();
  const Spatial red = cfg.reduced(spatial);
  if (r > 1) {
    t.conv += conv_macs(d, 1, r + 1, red);
    t.other += red.tokens() * d;
  }
  t.linear += red.tokens() * d * d;  // v
  t.conv += conv_macs(d * r * r, 1, 3, red);
  t.linear += n * d * d;  // out_proj
  return t;
}

void accumulate(FlopTally& into, const FlopTally& t) {
  into.conv += t.conv;
  into.linear += t.linear;
  into.matmul += t.matmul;
  into.other += t.other;
}

std::size_t params_with_prefix(const std::vector<ParamSpec>& plan, std::initializer_list<std::string> prefixes) {
  std::size_t n = 0;
  for (const auto& p : plan)
    for (const auto& prefix : prefixes)
      if (p.name.compare(0, prefix.size(), prefix) == 0) n += numel(p.shape);
  return n;
}

}  // namespace

FlopTally attention_flops(const EmsaConfig& cfg, Spatial spatial) { return attention_macs(cfg, spatial, 1); }

FlopsReport count_flops(const ModelConfig& cfg, Spatial input) {
  cfg.validate();
  const auto plan = parameter_plan(cfg);
  FlopsReport report;
  auto push = [&](std::string name, const FlopTally& t, std::initializer_list<std::string> prefixes) {
    report.modules.push_back(ModuleFlops{std::move(name), t, params_with_prefix(plan, prefixes)});
  };
  const bool pa = cfg.pe == PeKind::pa;

  // Stem.
  {
    FlopTally t;
    const u64 c = cfg.base_channels, half = c / 2;
    const Spatial s1 = conv_extent(input, 3, 2, 1), s2 = conv_extent(s1, 3, 2, 1);
    t.conv += conv_macs(half, cfg.in_channels, 3, s1);
    t.other += 2 * half * s1.tokens();  // affine, relu
    t.conv += conv_macs(c, half, 3, s2);
    t.other += 2 * c * s2.tokens();
    t.conv += conv_macs(c, c, 1, s2);
    if (pa) {
      t.conv += conv_macs(c, 1, 3, s2);
      t.other += c * s2.tokens();  // sigmoid
    }
    t.other += c * s2.tokens();  // layer norm
    push("stem", t, {"stem.", "stages.0.ape"});
  }

  Spatial s = stem_extent(input);
  for (std::size_t st = 0; st < kStages; ++st) {
    const u64 d = cfg.stage_channels(st);
    const std::string sp = "stages." + std::to_string(st) + ".";
    if (st > 0) {
      FlopTally t;
      s = conv_extent(s, 3, 2, 1);
      t.conv += conv_macs(d, cfg.stage_channels(st - 1), 3, s);
      t.other += d * s.tokens();  // affine
      if (pa) {
        t.conv += conv_macs(d, 1, 3, s);
        t.other += d * s.tokens();
      }
      push(sp + "embed", t, {sp + "embed.", sp + "ape"});
    }
    const auto acfg = cfg.attention_config(st);
    const u64 n = s.tokens(), hidden = d * cfg.mlp_ratio;
    for (std::size_t b = 0; b < cfg.blocks[st]; ++b) {
      const auto bp = block_prefix(st, b);
      FlopTally attn;
      attn.other += n * d;  // norm1
      if (cfg.variant == Variant::convnet_branch) {
        accumulate(attn, convnet_macs(acfg, s));
      } else {
        const StyleContext ctx{st, b, b + 1 == cfg.blocks[st]};
        if (uses_windows(acfg.window, ctx)) {
          const std::size_t ws = acfg.window_size;
          const u64 windows = ((s.height + ws - 1) / ws) * ((s.width + ws - 1) / ws);
          accumulate(attn, attention_macs(acfg, Spatial{ws, ws}, windows));
        } else {
          accumulate(attn, attention_macs(acfg, s, 1));
        }
      }
      push(bp + "attn", attn, {bp + "attn.", bp + "norm1."});
      FlopTally mlp;
      mlp.other += n * d;  // norm2
      mlp.linear += 2 * n * d * hidden;
      mlp.other += n * hidden;  // gelu
      push(bp + "mlp", mlp, {bp + "mlp.", bp + "norm2."});
    }
    if (cfg.style == WindowStyle::cwin) {
      FlopTally t;
      t.conv += conv_macs(d, 1, 7, s);
      push(sp + "cwin", t, {sp + "cwin."});
    }
  }

  {
    FlopTally t;
    const u64 top = cfg.stage_channels(kStages - 1);
    t.other += 2 * top * s.tokens();  // layer norm, average pool
    t.linear += top * cfg.num_classes;
    push("head", t, {"head."});
  }

  FlopTally sum;
  for (const auto& m : report.modules) accumulate(sum, m.flops);
  report.conv_flops = sum.conv;
  report.linear_flops = sum.linear;
  report.matmul_flops = sum.matmul;
  report.other_flops = sum.other;
  for (const auto& p : plan) report.params += numel(p.shape);
  return report;
}

FlopsReport window_style_flops(const ModelConfig& cfg, WindowStyle style, Spatial input) {
  ModelConfig c = cfg;
  c.style = style;
  return count_flops(c, input);
}

}  // namespace restv2
