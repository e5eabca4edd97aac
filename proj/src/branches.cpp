#include "restv2/branches.hpp"

#include "restv2/cka.hpp"
#include "restv2/errors.hpp"

namespace restv2 {

TensorD token_features(const TensorD& tokens) {
  if (tokens.rank() != 3) throw DimensionError("token features expect (B, n, d), got " + shape_str(tokens.shape()));
  return TensorD({tokens.dim(0) * tokens.dim(1), tokens.dim(2)}, tokens.values());
}

template <typename T>
std::vector<BranchSimilarity> branch_similarity_from_trace(const ForwardTrace<T>& trace) {
  std::vector<BranchSimilarity> rows;
  for (const auto& bt : trace.blocks) {
    BranchSimilarity row;
    row.stage = bt.stage;
    row.block = bt.block;
    const auto combined = token_features(bt.combined.template cast<double>());
    auto compare = [&](const TensorD& a, const TensorD& b) {
      const auto r = linear_cka(a, b);
      row.degenerate = row.degenerate || r.degenerate;
      return r.value;
    };
    std::optional<TensorD> attention, upsample;
    if (bt.attention.defined()) attention = token_features(bt.attention.template cast<double>());
    if (bt.upsample.defined()) upsample = token_features(bt.upsample.template cast<double>());
    if (attention && upsample) row.attention_vs_upsample = compare(*attention, *upsample);
    if (attention) row.attention_vs_combined = compare(*attention, combined);
    if (upsample) row.upsample_vs_combined = compare(*upsample, combined);
    rows.push_back(row);
  }
  return rows;
}

template <typename T>
std::vector<BranchSimilarity> branch_similarity_report(const Model<T>& model, const Tensor<T>& probe) {
  ForwardTrace<T> trace;
  model.forward(probe, &trace);
  return branch_similarity_from_trace(trace);
}

template std::vector<BranchSimilarity> branch_similarity_from_trace(const ForwardTrace<float>&);
template std::vector<BranchSimilarity> branch_similarity_from_trace(const ForwardTrace<double>&);
template std::vector<BranchSimilarity> branch_similarity_report(const Model<float>&, const Tensor<float>&);
template std::vector<BranchSimilarity> branch_similarity_report(const Model<double>&, const Tensor<double>&);

}  // namespace restv2
