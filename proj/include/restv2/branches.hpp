#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "restv2/model.hpp"

namespace restv2 {

/// Linear CKA between the two additive terms of one block and their sum.
/// A comparison is empty when the block lacks that term (no upsample branch,
/// or the attention-free variant).
struct BranchSimilarity {
  std::size_t stage = 0;
  std::size_t block = 0;
  std::optional<double> attention_vs_upsample;
  std::optional<double> attention_vs_combined;
  std::optional<double> upsample_vs_combined;
  bool degenerate = false;  // some comparison hit a zero-variance input
};

/// Token features of shape (B, n, d) flattened to (B*n, d) rows.
TensorD token_features(const TensorD& tokens);

/// Runs `probe` through the model once and compares the captured branch
/// outputs of every block.
template <typename T>
std::vector<BranchSimilarity> branch_similarity_report(const Model<T>& model, const Tensor<T>& probe);

/// The same table computed from an existing trace.
template <typename T>
std::vector<BranchSimilarity> branch_similarity_from_trace(const ForwardTrace<T>& trace);

}  // namespace restv2
