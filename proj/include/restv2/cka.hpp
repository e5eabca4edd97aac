#pragma once

#include "restv2/tensor.hpp"

namespace restv2 {

struct CkaResult {
  double value = 0;
  /// Set when either input has zero variance; value is then 0.
  bool degenerate = false;
};

/// Linear CKA between x (n, p1) and y (n, p2), rows are examples:
///   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)
/// with column-centered Xc, Yc. Throws DimensionError when n < 2 or the row
/// counts differ.
CkaResult linear_cka(const TensorD& x, const TensorD& y);

}  // namespace restv2
