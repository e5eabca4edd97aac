#include "restv2/positional.hpp"

#include <cmath>
#include <memory>

#include "restv2/errors.hpp"
#include "restv2/ops.hpp"

namespace restv2 {

std::string to_string(PeKind kind) {
  switch (kind) {
    case PeKind::none: return "none";
    case PeKind::ape: return "ape";
    case PeKind::rpe: return "rpe";
    case PeKind::pa: return "pa";
  }
  return "none";
}

PeKind parse_pe_kind(const std::string& text) {
  if (text == "none" || text == "w/o") return PeKind::none;
  if (text == "ape") return PeKind::ape;
  if (text == "rpe") return PeKind::rpe;
  if (text == "pa") return PeKind::pa;
  throw ConfigError("unknown positional embedding '" + text + "'");
}

std::size_t pe_parameter_count(const PeConfig& config) {
  std::size_t total = 0;
  for (const auto& s : config.stages) {
    switch (config.kind) {
      case PeKind::none: break;
      case PeKind::ape: total += s.height * s.width * s.channels; break;
      case PeKind::rpe: total += s.blocks * (s.key_height() + s.key_width()) * s.channels; break;
      case PeKind::pa: total += s.channels * 10; break;
    }
  }
  return total;
}

template <typename T>
Tensor<T> ape_apply(const Tensor<T>& x, const Tensor<T>& theta) {
  if (x.rank() != 3 || theta.rank() != 2 || x.dim(1) != theta.dim(0) || x.dim(2) != theta.dim(1)) {
    throw DimensionError("ape_apply: table " + shape_str(theta.shape()) + " does not match input " +
                         shape_str(x.shape()) + " (absolute embeddings are not resized)");
  }
  return add_broadcast(x, theta);
}

template <typename T>
Tensor<T> rpe_position_table(const Tensor<T>& pos_h, const Tensor<T>& pos_w) {
  if (pos_h.rank() != 4 || pos_w.rank() != 4 || pos_h.dim(2) != 1 || pos_w.dim(1) != 1 ||
      pos_h.dim(0) != pos_w.dim(0) || pos_h.dim(3) != pos_w.dim(3)) {
    throw DimensionError("rpe tables " + shape_str(pos_h.shape()) + " and " + shape_str(pos_w.shape()) +
                         " are not (k, h', 1, d_k) / (k, 1, w', d_k)");
  }
  const std::size_t k = pos_h.dim(0), h = pos_h.dim(1), w = pos_w.dim(2), dk = pos_h.dim(3);
  auto idx_h = std::make_shared<std::vector<std::int64_t>>(k * h * w * dk);
  auto idx_w = std::make_shared<std::vector<std::int64_t>>(k * h * w * dk);
  std::size_t flat = 0;
  for (std::size_t head = 0; head < k; ++head)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < dk; ++c, ++flat) {
          (*idx_h)[flat] = static_cast<std::int64_t>((head * h + y) * dk + c);
          (*idx_w)[flat] = static_cast<std::int64_t>((head * w + x) * dk + c);
        }
  const Shape shape{k, h * w, dk};
  return add(gather(pos_h, shape, idx_h), gather(pos_w, shape, idx_w));
}

template <typename T>
Tensor<T> rpe_apply(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& pos_h, const Tensor<T>& pos_w) {
  const auto table = rpe_position_table(pos_h, pos_w);
  if (keys.rank() != 4 || keys.dim(1) != table.dim(0) || keys.dim(2) != table.dim(1) ||
      keys.dim(3) != table.dim(2)) {
    throw LayoutError("rpe_apply: key geometry " + shape_str(keys.shape()) + " does not match position table " +
                      shape_str(table.shape()));
  }
  const T inv_sqrt = T(1) / std::sqrt(T(q.dim(3)));
  return scale(matmul(q, transpose_last(add_broadcast(keys, table))), inv_sqrt);
}

template <typename T>
Tensor<T> pa_apply(const Tensor<T>& x, const Tensor<T>& dw_weight, const Tensor<T>& dw_bias) {
  if (x.rank() != 4) throw DimensionError("pa_apply: expected (B, C, H, W), got " + shape_str(x.shape()));
  const std::size_t c = x.dim(1);
  const auto gate = sigmoid(conv2d(x, dw_weight, OptTensor<T>(dw_bias), Conv2dOptions{1, 1, c}));
  return mul(x, gate);
}

template Tensor<float> ape_apply(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> ape_apply(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> rpe_position_table(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> rpe_position_table(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> rpe_apply(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                 const Tensor<float>&);
template Tensor<double> rpe_apply(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&);
template Tensor<float> pa_apply(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> pa_apply(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace restv2
