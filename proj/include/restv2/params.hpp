#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "restv2/model.hpp"
#include "restv2/model_config.hpp"

namespace restv2 {

struct GroupCount {
  std::string group;
  std::size_t count = 0;
};

struct GroupDelta {
  std::string group;
  long long delta = 0;
};

struct ParamBreakdown {
  std::size_t total = 0;
  std::vector<GroupCount> groups;  // fixed group order, zero-count groups kept

  std::size_t group(const std::string& name) const;
};

/// Counts the parameter plan; equals the element count of built weights.
ParamBreakdown count_params(const ModelConfig& cfg);

template <typename T>
std::size_t count_params(const Model<T>& model) {
  return model.parameter_count();
}

/// A published model size or cost to reconcile against.
struct Anchor {
  std::string label;   // e.g. "ResTv2-T (PA)"
  std::string preset;  // built-in configuration name
  double published = 0;  // millions of parameters or GFLOPs
  double tolerance = 0;  // relative
};

std::vector<Anchor> parameter_anchors();
/// Published FLOPs at 224x224 for the size presets and the ablation variants.
std::vector<Anchor> flops_anchors();

struct ReconciliationRow {
  Anchor anchor;
  double computed = 0;        // same unit as anchor.published
  double relative_error = 0;  // (computed - published) / published
  bool within = false;
  ParamBreakdown breakdown;
  /// Per-group difference against restv2-t; explains where a variant's
  /// parameters come from.
  std::vector<GroupDelta> delta_vs_reference;
};

std::vector<ReconciliationRow> reconcile_params();
std::vector<ReconciliationRow> reconcile_flops();

}  // namespace restv2
