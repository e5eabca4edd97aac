#include "restv2/params.hpp"

#include <cmath>

#include "restv2/flops.hpp"

namespace restv2 {

namespace {

const std::vector<std::string>& group_order() {
  static const std::vector<std::string> order{"stem",      "patch_embed", "pos_embed", "attn_qkv",
                                              "attn_down", "attn_up",     "attn_proj", "mhim",
                                              "norm",      "mlp",         "cwin",      "head"};
  return order;
}

ReconciliationRow make_row(const Anchor& a, double computed, const ModelConfig& cfg, const ParamBreakdown& ref) {
  ReconciliationRow row;
  row.anchor = a;
  row.computed = computed;
  row.relative_error = (computed - a.published) / a.published;
  row.within = std::abs(row.relative_error) <= a.tolerance;
  row.breakdown = count_params(cfg);
  for (std::size_t i = 0; i < row.breakdown.groups.size(); ++i) {
    const auto& g = row.breakdown.groups[i];
    const long long delta = static_cast<long long>(g.count) - static_cast<long long>(ref.groups[i].count);
    if (delta != 0) row.delta_vs_reference.push_back(GroupDelta{g.group, delta});
  }
  return row;
}

}  // namespace

std::size_t ParamBreakdown::group(const std::string& name) const {
  for (const auto& g : groups)
    if (g.group == name) return g.count;
  return 0;
}

ParamBreakdown count_params(const ModelConfig& cfg) {
  ParamBreakdown out;
  for (const auto& g : group_order()) out.groups.push_back(GroupCount{g, 0});
  for (const auto& spec : parameter_plan(cfg)) {
    const std::size_t n = numel(spec.shape);
    out.total += n;
    for (auto& g : out.groups)
      if (g.group == spec.group) g.count += n;
  }
  return out;
}

std::vector<Anchor> parameter_anchors() {
  return {
      {"ResTv2-T", "restv2-t", 30.43, 0.02},
      {"ResTv2-T w/o upsample", "restv2-t-wo-up", 30.26, 0.02},
      {"ResTv2-T bilinear upsample", "restv2-t-bilinear", 30.26, 0.02},
      {"ResTv2-T PE w/o", "restv2-t-nope", 30.42, 0.02},
      {"ResTv2-T PE APE", "restv2-t-ape", 30.98, 0.02},
      {"ResTv2-T PE RPE", "restv2-t-rpe", 30.48, 0.02},
      {"ResTv2-T PE PA", "restv2-t", 30.43, 0.02},
      {"ConvNet", "convnet", 26.11, 0.02},
      {"ConvNetv2", "convnetv2", 26.67, 0.02},
      {"ResTv2-T +MHIM", "restv2-t-mhim", 30.44, 0.02},
      {"ResTv2-Lite", "restv2-lite", 10.66, 0.02},
      {"ResTv2-S", "restv2-s", 41.0, 0.02},
      {"ResTv2-B", "restv2-b", 56.0, 0.02},
      {"ResTv2-L", "restv2-l", 87.0, 0.02},
  };
}

std::vector<Anchor> flops_anchors() {
  return {
      {"ResTv2-T", "restv2-t", 4.1, 0.05},
      {"ResTv2-S", "restv2-s", 6.0, 0.05},
      {"ResTv2-B", "restv2-b", 7.9, 0.05},
      {"ResTv2-L", "restv2-l", 13.8, 0.05},
      {"ResTv2-T w/o upsample", "restv2-t-wo-up", 4.08, 0.05},
      {"ResTv2-T bilinear upsample", "restv2-t-bilinear", 4.08, 0.05},
      {"ConvNet", "convnet", 3.56, 0.05},
      {"ConvNetv2", "convnetv2", 4.09, 0.05},
      {"ResTv2-Lite", "restv2-lite", 1.45, 0.05},
  };
}

std::vector<ReconciliationRow> reconcile_params() {
  const auto ref = count_params(preset("restv2-t"));
  std::vector<ReconciliationRow> rows;
  for (const auto& a : parameter_anchors()) {
    const auto cfg = preset(a.preset);
    rows.push_back(make_row(a, static_cast<double>(count_params(cfg).total) / 1e6, cfg, ref));
  }
  return rows;
}

std::vector<ReconciliationRow> reconcile_flops() {
  const auto ref = count_params(preset("restv2-t"));
  std::vector<ReconciliationRow> rows;
  for (const auto& a : flops_anchors()) {
    const auto cfg = preset(a.preset);
    const auto report = count_flops(cfg, Spatial{224, 224});
    rows.push_back(make_row(a, static_cast<double>(report.total()) / 1e9, cfg, ref));
  }
  return rows;
}

}  // namespace restv2
