#include "restv2/cka.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "restv2/errors.hpp"
#include "restv2/parallel.hpp"

namespace restv2 {

namespace {

std::vector<double> centered(const TensorD& x) {
  const std::size_t n = x.dim(0), p = x.dim(1);
  std::vector<double> out(x.values());
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += out[i * p + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i * p + j] -= mean;
  }
  return out;
}

// ||A^T B||_F^2 for A (n, pa), B (n, pb).
double cross_frobenius_sq(const std::vector<double>& a, std::size_t pa, const std::vector<double>& b, std::size_t pb,
                          std::size_t n) {
  std::vector<double> row_sums(pa, 0.0);
  parallel_for(pa, [&](std::size_t i) {
    std::vector<double> acc(pb, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double s = a[r * pa + i];
      const double* brow = &b[r * pb];
      for (std::size_t j = 0; j < pb; ++j) acc[j] += s * brow[j];
    }
    double t = 0;
    for (double v : acc) t += v * v;
    row_sums[i] = t;
  });
  double total = 0;
  for (double v : row_sums) total += v;
  return total;
}

}  // namespace

CkaResult linear_cka(const TensorD& x, const TensorD& y) {
  if (x.rank() != 2 || y.rank() != 2) {
    throw DimensionError("linear_cka expects 2-D feature matrices, got " + shape_str(x.shape()) + " and " +
                         shape_str(y.shape()));
  }
  if (x.dim(0) != y.dim(0)) {
    throw DimensionError("linear_cka row counts differ: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const std::size_t n = x.dim(0), px = x.dim(1), py = y.dim(1);
  if (n < 2) throw DimensionError("linear_cka needs at least two examples");
  const auto xc = centered(x), yc = centered(y);
  const double xy = cross_frobenius_sq(yc, py, xc, px, n);
  const double xx = std::sqrt(cross_frobenius_sq(xc, px, xc, px, n));
  const double yy = std::sqrt(cross_frobenius_sq(yc, py, yc, py, n));
  if (!(xx > 0.0) || !(yy > 0.0)) return CkaResult{0.0, true};
  return CkaResult{std::clamp(xy / (xx * yy), 0.0, 1.0), false};
}

}  // namespace restv2
