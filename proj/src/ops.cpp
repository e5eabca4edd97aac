#include "restv2/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "restv2/errors.hpp"
#include "restv2/flop_tally.hpp"
#include "restv2/parallel.hpp"
#include "restv2/tape.hpp"

namespace restv2 {

namespace {

template <typename T>
using Grad = std::span<const T>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Wraps a forward result and records its backward closure when needed.
template <typename T, typename Fn>
Tensor<T> finish(Shape shape, std::vector<T> out, std::vector<Tensor<T>> inputs, Fn&& backward) {
  bool record = false;
  if (Tape<T>::active()) {
    for (const auto& t : inputs) record = record || (t.defined() && t.requires_grad());
  }
  auto result = Tensor<T>::make_result(std::move(shape), std::move(out), record);
  if (record) {
    Tape<T>::active()->record(std::move(inputs), result, std::forward<Fn>(backward));
  }
  return result;
}

template <typename T>
std::vector<T>* grad_target(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return &t.grad_buffer();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  int a = axis < 0 ? axis + static_cast<int>(rank) : axis;
  if (a < 0 || a >= static_cast<int>(rank)) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
  }
}

// Shared normalization kernel: the tensor is viewed as (outer, len, inner) and
// every (outer, inner) fibre of length `len` is normalized. Optional affine
// parameters are indexed along `len`.
template <typename T>
Tensor<T> normalize_fibres(const Tensor<T>& x, std::size_t outer, std::size_t len, std::size_t inner,
                           const Tensor<T>* gamma, const Tensor<T>* beta, T eps) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(outer * inner);
  const T* g = gamma ? gamma->data().data() : nullptr;
  const T* b = beta ? beta->data().data() : nullptr;
  parallel_for(outer * inner, [&](std::size_t f) {
    const std::size_t o = f / inner, in = f % inner;
    const std::size_t base = o * len * inner + in;
    T mean = 0;
    for (std::size_t i = 0; i < len; ++i) mean += xv[base + i * inner];
    mean /= T(len);
    T var = 0;
    for (std::size_t i = 0; i < len; ++i) {
      T d = xv[base + i * inner] - mean;
      var += d * d;
    }
    var /= T(len);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[f] = inv;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t k = base + i * inner;
      const T h = (xv[k] - mean) * inv;
      xhat[k] = h;
      out[k] = g ? h * g[i] + b[i] : h;
    }
  });
  tally_flops(FlopCategory::other, xv.size());

  std::vector<Tensor<T>> inputs{x};
  if (gamma) inputs.push_back(*gamma);
  if (beta) inputs.push_back(*beta);
  Tensor<T> gamma_t = gamma ? *gamma : Tensor<T>();
  Tensor<T> beta_t = beta ? *beta : Tensor<T>();
  return finish<T>(x.shape(), std::move(out), std::move(inputs),
                   [x, gamma_t, beta_t, outer, len, inner, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)](Grad<T> dy) {
                     const T* g = gamma_t.defined() ? gamma_t.data().data() : nullptr;
                     if (auto* dg = grad_target(gamma_t)) {
                       for (std::size_t k = 0; k < dy.size(); ++k) (*dg)[(k / inner) % len] += dy[k] * xhat[k];
                     }
                     if (auto* db = grad_target(beta_t)) {
                       for (std::size_t k = 0; k < dy.size(); ++k) (*db)[(k / inner) % len] += dy[k];
                     }
                     auto* dx = grad_target(x);
                     if (!dx) return;
                     for (std::size_t f = 0; f < outer * inner; ++f) {
                       const std::size_t o = f / inner, in = f % inner;
                       const std::size_t base = o * len * inner + in;
                       T sum_d = 0, sum_dx = 0;
                       for (std::size_t i = 0; i < len; ++i) {
                         const std::size_t k = base + i * inner;
                         const T d = g ? dy[k] * g[i] : dy[k];
                         sum_d += d;
                         sum_dx += d * xhat[k];
                       }
                       const T inv = inv_std[f];
                       for (std::size_t i = 0; i < len; ++i) {
                         const std::size_t k = base + i * inner;
                         const T d = g ? dy[k] * g[i] : dy[k];
                         (*dx)[k] += inv / T(len) * (T(len) * d - sum_d - xhat[k] * sum_dx);
                       }
                     }
                   });
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D df) {
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  tally_flops(FlopCategory::other, xv.size());
  return finish<T>(x.shape(), std::move(out), {x}, [x, df](Grad<T> dy) {
    auto* dx = grad_target(x);
    if (!dx) return;
    const auto& xv = x.values();
    for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * df(xv[i]);
  });
}

using Index = std::vector<std::int64_t>;

std::shared_ptr<const Index> make_index(Index idx) {
  return std::make_shared<const Index>(std::move(idx));
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ConfigError("conv2d: extent " + std::to_string(in) + " with padding " + std::to_string(padding) +
                      " is smaller than kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  const auto &av = a.values(), &bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return finish<T>(a.shape(), std::move(out), {a, b}, [a, b](Grad<T> dy) {
    if (auto* da = grad_target(a))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
    if (auto* db = grad_target(b))
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i];
  });
}

template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  const auto &as = a.shape(), &bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    shape_mismatch("add_broadcast", as, bs);
  }
  const auto &av = a.values(), &bv = b.values();
  const std::size_t m = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % m];
  return finish<T>(as, std::move(out), {a, b}, [a, b, m](Grad<T> dy) {
    if (auto* da = grad_target(a))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
    if (auto* db = grad_target(b))
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i % m] += dy[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  const auto &av = a.values(), &bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return finish<T>(a.shape(), std::move(out), {a, b}, [a, b](Grad<T> dy) {
    if (auto* da = grad_target(a)) {
      const auto& bv = b.values();
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
    }
    if (auto* db = grad_target(b)) {
      const auto& av = a.values();
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return finish<T>(a.shape(), std::move(out), {a}, [a, factor](Grad<T> dy) {
    if (auto* da = grad_target(a))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v;
  return finish<T>(Shape{}, std::vector<T>{acc}, {a}, [a](Grad<T> dy) {
    if (auto* da = grad_target(a))
      for (auto& g : *da) g += dy[0];
  });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) shape_mismatch("reshape", a.shape(), shape);
  return finish<T>(std::move(shape), a.values(), {a}, [a](Grad<T> dy) {
    if (auto* da = grad_target(a))
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i];
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape out_shape, std::shared_ptr<const std::vector<std::int64_t>> index) {
  if (index->size() != numel(out_shape)) {
    throw DimensionError("gather: index map of length " + std::to_string(index->size()) +
                         " does not fill shape " + shape_str(out_shape));
  }
  const auto& av = a.values();
  std::vector<T> out(index->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto src = (*index)[i];
    out[i] = src < 0 ? T(0) : av[static_cast<std::size_t>(src)];
  }
  return finish<T>(std::move(out_shape), std::move(out), {a}, [a, index](Grad<T> dy) {
    auto* da = grad_target(a);
    if (!da) return;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const auto src = (*index)[i];
      if (src >= 0) (*da)[static_cast<std::size_t>(src)] += dy[i];
    }
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const auto& s = a.shape();
  const std::size_t rank = s.size();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw DimensionError("permute: axis list does not match shape " + shape_str(s));
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) throw DimensionError("permute: invalid axis list for shape " + shape_str(s));
    seen[ax] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = s[axes[i]];
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Index idx(a.size());
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_stride[axes[i]];
    idx[flat] = static_cast<std::int64_t>(src);
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(a, std::move(out_shape), make_index(std::move(idx)));
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& a) {
  if (a.rank() < 2) throw DimensionError("transpose_last: rank < 2 for shape " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

// ---------------------------------------------------------------------------
// Contractions

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto &as = a.shape(), &bs = b.shape();
  if (as.size() < 2 || as.size() != bs.size() || as[as.size() - 1] != bs[bs.size() - 2] ||
      !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    shape_mismatch("matmul", as, bs);
  }
  const std::size_t m = as[as.size() - 2], p = as.back(), q = bs.back();
  const std::size_t batch = a.size() / (m * p);
  Shape out_shape = as;
  out_shape.back() = q;
  const auto &av = a.values(), &bv = b.values();
  std::vector<T> out(batch * m * q, T(0));
  parallel_for(batch * m, [&](std::size_t row) {
    const std::size_t bi = row / m;
    const T* arow = av.data() + row * p;
    const T* bmat = bv.data() + bi * p * q;
    T* orow = out.data() + row * q;
    for (std::size_t k = 0; k < p; ++k) {
      const T s = arow[k];
      const T* brow = bmat + k * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += s * brow[j];
    }
  });
  tally_flops(FlopCategory::matmul, batch * m * p * q);
  return finish<T>(std::move(out_shape), std::move(out), {a, b}, [a, b, batch, m, p, q](Grad<T> dy) {
    const auto &av = a.values(), &bv = b.values();
    if (auto* da = grad_target(a)) {
      parallel_for(batch * m, [&](std::size_t row) {
        const std::size_t bi = row / m;
        const T* g = dy.data() + row * q;
        for (std::size_t k = 0; k < p; ++k) {
          const T* brow = bv.data() + bi * p * q + k * q;
          T acc = 0;
          for (std::size_t j = 0; j < q; ++j) acc += g[j] * brow[j];
          (*da)[row * p + k] += acc;
        }
      });
    }
    if (auto* db = grad_target(b)) {
      parallel_for(batch * p, [&](std::size_t prow) {
        const std::size_t bi = prow / p, k = prow % p;
        T* drow = db->data() + prow * q;
        for (std::size_t i = 0; i < m; ++i) {
          const T s = av[(bi * m + i) * p + k];
          const T* g = dy.data() + (bi * m + i) * q;
          for (std::size_t j = 0; j < q; ++j) drow[j] += s * g[j];
        }
      });
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const OptTensor<T>& bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) shape_mismatch("linear", x.shape(), w.shape());
  const std::size_t din = w.dim(0), dout = w.dim(1);
  if (bias && bias->shape() != Shape{dout}) shape_mismatch("linear bias", w.shape(), bias->shape());
  const std::size_t rows = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  const auto &xv = x.values(), &wv = w.values();
  const T* bv = bias ? bias->data().data() : nullptr;
  std::vector<T> out(rows * dout, T(0));
  parallel_for(rows, [&](std::size_t r) {
    T* orow = out.data() + r * dout;
    for (std::size_t k = 0; k < din; ++k) {
      const T s = xv[r * din + k];
      const T* wrow = wv.data() + k * dout;
      for (std::size_t j = 0; j < dout; ++j) orow[j] += s * wrow[j];
    }
    if (bv)
      for (std::size_t j = 0; j < dout; ++j) orow[j] += bv[j];
  });
  tally_flops(FlopCategory::linear, rows * din * dout);
  Tensor<T> b = bias ? *bias : Tensor<T>();
  std::vector<Tensor<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return finish<T>(std::move(out_shape), std::move(out), std::move(inputs), [x, w, b, rows, din, dout](Grad<T> dy) {
    const auto &xv = x.values(), &wv = w.values();
    if (auto* dx = grad_target(x)) {
      parallel_for(rows, [&](std::size_t r) {
        const T* g = dy.data() + r * dout;
        for (std::size_t k = 0; k < din; ++k) {
          const T* wrow = wv.data() + k * dout;
          T acc = 0;
          for (std::size_t j = 0; j < dout; ++j) acc += g[j] * wrow[j];
          (*dx)[r * din + k] += acc;
        }
      });
    }
    if (auto* dw = grad_target(w)) {
      parallel_for(din, [&](std::size_t k) {
        T* drow = dw->data() + k * dout;
        for (std::size_t r = 0; r < rows; ++r) {
          const T s = xv[r * din + k];
          const T* g = dy.data() + r * dout;
          for (std::size_t j = 0; j < dout; ++j) drow[j] += s * g[j];
        }
      });
    }
    if (auto* db = grad_target(b)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < dout; ++j) (*db)[j] += dy[r * dout + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax and normalization

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  parallel_for(outer * inner, [&](std::size_t f) {
    const std::size_t base = (f / inner) * len * inner + f % inner;
    T mx = xv[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
    T total = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const T e = std::exp(xv[base + i * inner] - mx);
      out[base + i * inner] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
  });
  tally_flops(FlopCategory::other, xv.size());
  auto y = std::make_shared<const std::vector<T>>(out);
  return finish<T>(s, std::move(out), {x}, [x, y, outer, inner, len](Grad<T> dy) {
    auto* dx = grad_target(x);
    if (!dx) return;
    for (std::size_t f = 0; f < outer * inner; ++f) {
      const std::size_t base = (f / inner) * len * inner + f % inner;
      T dot = 0;
      for (std::size_t i = 0; i < len; ++i) dot += dy[base + i * inner] * (*y)[base + i * inner];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = base + i * inner;
        (*dx)[k] += (*y)[k] * (dy[k] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d}) shape_mismatch("layer_norm gamma", x.shape(), gamma.shape());
  if (beta.shape() != Shape{d}) shape_mismatch("layer_norm beta", x.shape(), beta.shape());
  return normalize_fibres(x, x.size() / d, d, 1, &gamma, &beta, eps);
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  require_rank("instance_norm", x, 4);
  const auto& s = x.shape();
  return normalize_fibres<T>(x, s[0] * s[1], s[2] * s[3], 1, nullptr, nullptr, eps);
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, T eps) {
  require_rank("channel_norm", x, 4);
  const auto& s = x.shape();
  return normalize_fibres<T>(x, s[0], s[1], s[2] * s[3], nullptr, nullptr, eps);
}

template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale_t, const Tensor<T>& shift) {
  require_rank("channel_affine", x, 4);
  const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (scale_t.shape() != Shape{c}) shape_mismatch("channel_affine scale", x.shape(), scale_t.shape());
  if (shift.shape() != Shape{c}) shape_mismatch("channel_affine shift", x.shape(), shift.shape());
  const auto &xv = x.values(), &sv = scale_t.values(), &tv = shift.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t ch = (i / plane) % c;
    out[i] = xv[i] * sv[ch] + tv[ch];
  }
  tally_flops(FlopCategory::other, xv.size());
  return finish<T>(x.shape(), std::move(out), {x, scale_t, shift}, [x, scale_t, shift, c, plane](Grad<T> dy) {
    const auto &xv = x.values(), &sv = scale_t.values();
    auto* dx = grad_target(x);
    auto* ds = grad_target(scale_t);
    auto* dt = grad_target(shift);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const std::size_t ch = (i / plane) % c;
      if (dx) (*dx)[i] += dy[i] * sv[ch];
      if (ds) (*ds)[ch] += dy[i] * xv[i];
      if (dt) (*dt)[ch] += dy[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const OptTensor<T>& bias, Conv2dOptions opts) {
  require_rank("conv2d input", x, 4);
  require_rank("conv2d weight", w, 4);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t groups = opts.groups;
  if (groups == 0 || cin % groups != 0 || cout % groups != 0) {
    throw ConfigError("conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (cin / groups != cin_g) shape_mismatch("conv2d", x.shape(), w.shape());
  if (bias && bias->shape() != Shape{cout}) shape_mismatch("conv2d bias", w.shape(), bias->shape());
  const std::size_t stride = opts.stride, pad = opts.padding;
  const std::size_t ho = conv_out_extent(h, kh, stride, pad), wo = conv_out_extent(wd, kw, stride, pad);
  const std::size_t cout_g = cout / groups;
  const auto &xv = x.values(), &wv = w.values();
  const T* bv = bias ? bias->data().data() : nullptr;
  std::vector<T> out(batch * cout * ho * wo, T(0));

  // Each output plane accumulates over (ci, ky, kx) in that order, then adds bias.
  parallel_for(batch * cout, [&](std::size_t bc) {
    const std::size_t b = bc / cout, co = bc % cout, g = co / cout_g;
    T* oplane = out.data() + bc * ho * wo;
    for (std::size_t ci = 0; ci < cin_g; ++ci) {
      const T* xplane = xv.data() + (b * cin + g * cin_g + ci) * h * wd;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T wt = wv[((co * cin_g + ci) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* xrow = xplane + iy * wd;
            T* orow = oplane + oy * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              orow[ox] += xrow[ix] * wt;
            }
          }
        }
      }
    }
    if (bv)
      for (std::size_t i = 0; i < ho * wo; ++i) oplane[i] += bv[co];
  });
  tally_flops(FlopCategory::conv, batch * cout * cin_g * kh * kw * ho * wo);

  Tensor<T> bt = bias ? *bias : Tensor<T>();
  std::vector<Tensor<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return finish<T>(Shape{batch, cout, ho, wo}, std::move(out), std::move(inputs),
                   [=](Grad<T> dy) {
                     const auto &xv = x.values(), &wv = w.values();
                     auto visit = [&](std::size_t b, std::size_t co, auto&& fn) {
                       const std::size_t g = co / cout_g;
                       const T* gplane = dy.data() + (b * cout + co) * ho * wo;
                       for (std::size_t ci = 0; ci < cin_g; ++ci) {
                         const std::size_t xc = (b * cin + g * cin_g + ci) * h * wd;
                         for (std::size_t ky = 0; ky < kh; ++ky)
                           for (std::size_t kx = 0; kx < kw; ++kx) {
                             const std::size_t widx = ((co * cin_g + ci) * kh + ky) * kw + kx;
                             for (std::size_t oy = 0; oy < ho; ++oy) {
                               const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                         static_cast<std::ptrdiff_t>(pad);
                               if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                               for (std::size_t ox = 0; ox < wo; ++ox) {
                                 const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                           static_cast<std::ptrdiff_t>(pad);
                                 if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                 fn(xc + iy * wd + ix, widx, gplane[oy * wo + ox]);
                               }
                             }
                           }
                       }
                     };
                     if (auto* dx = grad_target(x)) {
                       parallel_for(batch * groups, [&](std::size_t bg) {
                         const std::size_t b = bg / groups, g = bg % groups;
                         for (std::size_t co = g * cout_g; co < (g + 1) * cout_g; ++co)
                           visit(b, co, [&](std::size_t xi, std::size_t wi, T gv) { (*dx)[xi] += wv[wi] * gv; });
                       });
                     }
                     if (auto* dw = grad_target(w)) {
                       parallel_for(cout, [&](std::size_t co) {
                         for (std::size_t b = 0; b < batch; ++b)
                           visit(b, co, [&](std::size_t xi, std::size_t wi, T gv) { (*dw)[wi] += xv[xi] * gv; });
                       });
                     }
                     if (auto* db = grad_target(bt)) {
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t co = 0; co < cout; ++co)
                           for (std::size_t i = 0; i < ho * wo; ++i) (*db)[co] += dy[(b * cout + co) * ho * wo + i];
                     }
                   });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
      [](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        return cdf + v * pdf;
      });
}

template <typename T>
static T stable_sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return stable_sigmoid(v); },
      [](T v) {
        const T s = stable_sigmoid(v);
        return s * (T(1) - s);
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v) { return v > 0 ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Spatial rearrangement and resampling

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  require_rank("pixel_shuffle", x, 4);
  const std::size_t b = x.dim(0), crr = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (r == 0 || crr % (r * r) != 0) {
    throw ConfigError("pixel_shuffle: channels " + std::to_string(crr) + " not divisible by r^2 = " +
                      std::to_string(r * r));
  }
  const std::size_t c = crr / (r * r), oh = h * r, ow = w * r;
  Index idx(x.size());
  std::size_t flat = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const std::size_t i = y / r, p = y % r, j = xx / r, q = xx % r;
          const std::size_t src_c = ci * r * r + p * r + q;
          idx[flat++] = static_cast<std::int64_t>(((bi * crr + src_c) * h + i) * w + j);
        }
  return gather(x, Shape{b, c, oh, ow}, make_index(std::move(idx)));
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  require_rank("pixel_unshuffle", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), oh = x.dim(2), ow = x.dim(3);
  if (r == 0 || oh % r != 0 || ow % r != 0) {
    throw ConfigError("pixel_unshuffle: extents " + shape_str(x.shape()) + " not divisible by " + std::to_string(r));
  }
  const std::size_t h = oh / r, w = ow / r, crr = c * r * r;
  Index idx(x.size());
  std::size_t flat = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t cc = 0; cc < crr; ++cc)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t ci = cc / (r * r), p = (cc / r) % r, q = cc % r;
          idx[flat++] = static_cast<std::int64_t>(((bi * c + ci) * oh + i * r + p) * ow + j * r + q);
        }
  return gather(x, Shape{b, crr, h, w}, make_index(std::move(idx)));
}

template <typename T>
Tensor<T> avg_pool_global(const Tensor<T>& x) {
  require_rank("avg_pool_global", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto& xv = x.values();
  std::vector<T> out(b * c);
  for (std::size_t i = 0; i < b * c; ++i) {
    T acc = 0;
    for (std::size_t k = 0; k < plane; ++k) acc += xv[i * plane + k];
    out[i] = acc / T(plane);
  }
  tally_flops(FlopCategory::other, xv.size());
  return finish<T>(Shape{b, c}, std::move(out), {x}, [x, plane](Grad<T> dy) {
    auto* dx = grad_target(x);
    if (!dx) return;
    for (std::size_t i = 0; i < dy.size(); ++i)
      for (std::size_t k = 0; k < plane; ++k) (*dx)[i * plane + k] += dy[i] / T(plane);
  });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t r, std::size_t out_h, std::size_t out_w) {
  require_rank("upsample_nearest", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (r == 0) throw ConfigError("upsample_nearest: scale must be positive");
  Index idx(b * c * out_h * out_w);
  std::size_t flat = 0;
  for (std::size_t bc = 0; bc < b * c; ++bc)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const std::size_t sy = std::min(y / r, h - 1), sx = std::min(xx / r, w - 1);
        idx[flat++] = static_cast<std::int64_t>((bc * h + sy) * w + sx);
      }
  tally_flops(FlopCategory::other, idx.size());
  return gather(x, Shape{b, c, out_h, out_w}, make_index(std::move(idx)));
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t r, std::size_t out_h, std::size_t out_w) {
  require_rank("upsample_bilinear", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (r == 0) throw ConfigError("upsample_bilinear: scale must be positive");
  struct Tap {
    std::size_t lo, hi;
    T frac;
  };
  auto taps = [r](std::size_t n_out, std::size_t n_in) {
    std::vector<Tap> t(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      T src = (T(i) + T(0.5)) / T(r) - T(0.5);
      if (src < 0) src = 0;
      std::size_t lo = std::min(static_cast<std::size_t>(src), n_in - 1);
      std::size_t hi = std::min(lo + 1, n_in - 1);
      t[i] = Tap{lo, hi, src - T(lo)};
    }
    return t;
  };
  auto ty = std::make_shared<const std::vector<Tap>>(taps(out_h, h));
  auto tx = std::make_shared<const std::vector<Tap>>(taps(out_w, w));
  const auto& xv = x.values();
  std::vector<T> out(b * c * out_h * out_w);
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    const T* p = xv.data() + bc * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = (*ty)[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const Tap& e = (*tx)[xx];
        const T top = p[a.lo * w + e.lo] * (T(1) - e.frac) + p[a.lo * w + e.hi] * e.frac;
        const T bot = p[a.hi * w + e.lo] * (T(1) - e.frac) + p[a.hi * w + e.hi] * e.frac;
        out[(bc * out_h + y) * out_w + xx] = top * (T(1) - a.frac) + bot * a.frac;
      }
    }
  }
  tally_flops(FlopCategory::other, out.size());
  return finish<T>(Shape{b, c, out_h, out_w}, std::move(out), {x}, [x, ty, tx, b, c, h, w, out_h, out_w](Grad<T> dy) {
    auto* dx = grad_target(x);
    if (!dx) return;
    for (std::size_t bc = 0; bc < b * c; ++bc) {
      T* p = dx->data() + bc * h * w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const Tap& a = (*ty)[y];
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const Tap& e = (*tx)[xx];
          const T g = dy[(bc * out_h + y) * out_w + xx];
          p[a.lo * w + e.lo] += g * (T(1) - a.frac) * (T(1) - e.frac);
          p[a.lo * w + e.hi] += g * (T(1) - a.frac) * e.frac;
          p[a.hi * w + e.lo] += g * a.frac * (T(1) - e.frac);
          p[a.hi * w + e.hi] += g * a.frac * e.frac;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t h, std::size_t w) {
  require_rank("crop2d", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  if (h > ih || w > iw) shape_mismatch("crop2d", x.shape(), Shape{b, c, h, w});
  if (h == ih && w == iw) return x;
  Index idx(b * c * h * w);
  std::size_t flat = 0;
  for (std::size_t bc = 0; bc < b * c; ++bc)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) idx[flat++] = static_cast<std::int64_t>((bc * ih + y) * iw + xx);
  return gather(x, Shape{b, c, h, w}, make_index(std::move(idx)));
}

template <typename T>
Tensor<T> tokens_to_image(const Tensor<T>& x, std::size_t h, std::size_t w) {
  require_rank("tokens_to_image", x, 3);
  if (x.dim(1) != h * w) {
    throw LayoutError("tokens_to_image: " + std::to_string(x.dim(1)) + " tokens cannot form a " +
                      std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  return permute(reshape(x, Shape{x.dim(0), h, w, x.dim(2)}), {0, 3, 1, 2});
}

template <typename T>
Tensor<T> image_to_tokens(const Tensor<T>& x) {
  require_rank("image_to_tokens", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(permute(x, {0, 2, 3, 1}), Shape{b, h * w, c});
}

#define RESTV2_INSTANTIATE(T)                                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add_broadcast(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                          \
  template Tensor<T> transpose_last(const Tensor<T>&);                                                     \
  template Tensor<T> gather(const Tensor<T>&, Shape, std::shared_ptr<const std::vector<std::int64_t>>);    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const OptTensor<T>&);                      \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                       \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                                   \
  template Tensor<T> channel_norm(const Tensor<T>&, T);                                                    \
  template Tensor<T> channel_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const OptTensor<T>&, Conv2dOptions);       \
  template Tensor<T> gelu(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> avg_pool_global(const Tensor<T>&);                                                    \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> crop2d(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Tensor<T> tokens_to_image(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> image_to_tokens(const Tensor<T>&);

RESTV2_INSTANTIATE(float)
RESTV2_INSTANTIATE(double)

#undef RESTV2_INSTANTIATE

}  // namespace restv2
