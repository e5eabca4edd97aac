#include <doctest.h>

#include <cmath>

#include "restv2/errors.hpp"
#include "restv2/flop_tally.hpp"
#include "restv2/ops.hpp"
#include "test_util.hpp"

using namespace restv2;
using testutil::randn;

namespace {

TensorD conv_oracle(const TensorD& x, const TensorD& w, const TensorD& b, std::size_t stride, std::size_t pad,
                    std::size_t groups) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t og = Cout / groups;
  (void)Cin;
  std::vector<double> out(B * Cout * Ho * Wo);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = b.data()[co];
          const std::size_t g = co / og;
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad), ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += x.at({n, g * cg + ci, std::size_t(iy), std::size_t(ix)}) * w.at({co, ci, ky, kx});
              }
          out[((n * Cout + co) * Ho + oy) * Wo + ox] = acc;
        }
  return TensorD({B, Cout, Ho, Wo}, out);
}

}  // namespace

TEST_CASE("matmul small cases") {
  TensorD a({2, 2}, {1, 2, 3, 4});
  TensorD eye({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).values() == a.values());
  auto sel = matmul(TensorD({1, 2}, {1, 0}), TensorD({2, 1}, {2, 5}));
  CHECK(sel.shape() == Shape{1, 1});
  CHECK(sel.item() == 2);
}

TEST_CASE("matmul equals a triple loop") {
  auto a = randn({3, 4}, 11), b = randn({4, 2}, 12);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == acc);
    }
  auto ba = randn({2, 3, 4}, 13), bb = randn({2, 4, 5}, 14);
  auto bc = matmul(ba, bb);
  CHECK(bc.shape() == Shape{2, 3, 5});
  for (std::size_t n = 0; n < 2; ++n) {
    double acc = 0;
    for (std::size_t k = 0; k < 4; ++k) acc += ba.at({n, 2, k}) * bb.at({n, k, 4});
    CHECK(bc.at({n, 2, 4}) == doctest::Approx(acc).epsilon(1e-14));
  }
}

TEST_CASE("matmul shape errors name both shapes") {
  try {
    matmul(randn({2, 3}, 1), randn({4, 2}, 2));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(randn({2, 2, 3}, 1), randn({3, 3, 2}, 2)), DimensionError);
}

TEST_CASE("softmax") {
  auto u = softmax(TensorD({3}, {0, 0, 0}), -1);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto big = softmax(TensorD({2}, {1000, 0}), 0);
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] < 1e-300);

  auto s = softmax(TensorD({3}, {1, 2, 3}), 0);
  long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s.data()[i] - double(std::exp(1.0L + i) / z)) < 1e-15);

  auto r = softmax(randn({4, 7, 5}, 9, 300.0), 1);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t c = 0; c < 5; ++c) {
      double total = 0;
      for (std::size_t b = 0; b < 7; ++b) {
        CHECK(r.at({a, b, c}) >= 0);
        total += r.at({a, b, c});
      }
      CHECK(std::abs(total - 1) < 1e-6);
    }
}

TEST_CASE("layer norm") {
  auto ones = TensorD::full({4}, 1.0), zeros = TensorD::zeros({4});
  auto c = layer_norm(TensorD::full({1, 4}, 3.0), ones, zeros);
  for (double v : c.data()) CHECK(v == 0.0);

  auto p = layer_norm(TensorD({1, 2}, {1, 3}), TensorD::full({2}, 1.0), TensorD::zeros({2}));
  const double expect = 1.0 / std::sqrt(1.0 + kNormEps);
  CHECK(p.data()[0] == doctest::Approx(-expect).epsilon(1e-14));
  CHECK(p.data()[1] == doctest::Approx(expect).epsilon(1e-14));

  auto x = randn({2, 3, 16}, 4, 5.0);
  auto y = layer_norm(x, TensorD::full({16}, 1.0), TensorD::zeros({16}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t n = 0; n < 3; ++n) {
      double m = 0, v = 0;
      for (std::size_t d = 0; d < 16; ++d) m += y.at({b, n, d});
      m /= 16;
      for (std::size_t d = 0; d < 16; ++d) v += (y.at({b, n, d}) - m) * (y.at({b, n, d}) - m);
      v /= 16;
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(v - 1) < 1e-5);
    }
}

TEST_CASE("conv2d small cases") {
  auto x = randn({1, 3, 4, 5}, 2);
  std::vector<double> eye(9, 0.0);
  for (int c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
  CHECK(testutil::bitwise_equal(conv2d(x, TensorD({3, 3, 1, 1}, eye), OptTensor<double>()), x));
  CHECK(testutil::bitwise_equal(conv2d(x, TensorD::full({3, 1, 1, 1}, 1.0), OptTensor<double>(), {1, 0, 3}), x));

  auto s = conv2d(TensorD::full({1, 1, 3, 3}, 1.0), TensorD::full({1, 1, 3, 3}, 1.0), OptTensor<double>());
  CHECK(s.shape() == Shape{1, 1, 1, 1});
  CHECK(s.item() == 9);
}

TEST_CASE("conv2d equals the six-loop reference") {
  SUBCASE("depth-wise 3x3 stride 2 pad 1") {
    auto x = randn({2, 4, 7, 6}, 21), w = randn({4, 1, 3, 3}, 22), b = randn({4}, 23);
    auto y = conv2d(x, w, OptTensor<double>(b), {2, 1, 4});
    auto ref = conv_oracle(x, w, b, 2, 1, 4);
    CHECK(y.shape() == ref.shape());
    CHECK(testutil::max_abs_diff(y, ref) < 1e-13);
  }
  SUBCASE("dense 3x3 stride 1 pad 1") {
    auto x = randn({1, 3, 5, 5}, 24), w = randn({2, 3, 3, 3}, 25), b = randn({2}, 26);
    CHECK(testutil::max_abs_diff(conv2d(x, w, OptTensor<double>(b), {1, 1, 1}), conv_oracle(x, w, b, 1, 1, 1)) <
          1e-13);
  }
  SUBCASE("grouped with depth multiplier") {
    auto x = randn({1, 2, 6, 6}, 27), w = randn({6, 1, 3, 3}, 28), b = randn({6}, 29);
    CHECK(testutil::max_abs_diff(conv2d(x, w, OptTensor<double>(b), {2, 1, 2}), conv_oracle(x, w, b, 2, 1, 2)) <
          1e-13);
  }
}

TEST_CASE("conv2d output extents and divisibility") {
  CHECK(conv_out_extent(224, 3, 2, 1) == 112);
  CHECK(conv_out_extent(225, 3, 2, 1) == 113);
  CHECK(conv_out_extent(7, 3, 1, 1) == 7);
  CHECK_THROWS_AS(conv2d(randn({1, 3, 4, 4}, 1), randn({4, 1, 3, 3}, 2), OptTensor<double>(), {1, 1, 2}),
                  ConfigError);
}

TEST_CASE("linear") {
  auto x = randn({2, 3}, 5);
  TensorD eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(testutil::bitwise_equal(linear(x, eye, OptTensor<double>(TensorD::zeros({3}))), x));
  auto y = linear(TensorD({1, 2}, {1, 1}), TensorD({2, 1}, {1, 1}), OptTensor<double>(TensorD({1}, {1})));
  CHECK(y.item() == 3);

  auto a = randn({2, 4, 5}, 6), w = randn({5, 3}, 7), b = randn({3}, 8);
  auto composed = add_broadcast(matmul(reshape(a, {8, 5}), w), b);
  CHECK(testutil::max_abs_diff(reshape(linear(a, w, OptTensor<double>(b)), {8, 3}), composed) == 0.0);
  CHECK_THROWS_AS(linear(a, randn({4, 3}, 1), OptTensor<double>()), DimensionError);
}

TEST_CASE("activations") {
  CHECK(gelu(TensorD::scalar(0.0)).item() == 0.0);
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == 0.5);
  CHECK(std::abs(gelu(TensorD::scalar(10.0)).item() - 10.0) < 1e-6);
  const long double g1 = 0.5L * (1.0L + std::erf(1.0L / std::sqrt(2.0L)));
  CHECK(std::abs(gelu(TensorD::scalar(1.0)).item() - double(g1)) < 1e-15);
  auto r = relu(TensorD({3}, {-1, 0, 2}));
  CHECK(r.values() == std::vector<double>{0, 0, 2});
}

TEST_CASE("pixel shuffle layout") {
  auto x = randn({2, 12, 3, 2}, 3);
  CHECK(testutil::bitwise_equal(pixel_shuffle(x, 1), x));
  auto s = pixel_shuffle(TensorD({1, 4, 1, 1}, {1, 2, 3, 4}), 2);
  CHECK(s.shape() == Shape{1, 1, 2, 2});
  CHECK(s.values() == std::vector<double>{1, 2, 3, 4});
  auto y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{2, 3, 6, 4});
  CHECK(y.at({1, 2, 2 * 2 + 1, 1 * 2 + 0}) == x.at({1, 2 * 4 + 1 * 2 + 0, 2, 1}));
  CHECK_THROWS_AS(pixel_shuffle(randn({1, 6, 2, 2}, 1), 2), ConfigError);
}

TEST_CASE("pixel shuffle round trips") {
  for (std::size_t r : {1ul, 2ul, 3ul, 4ul}) {
    auto x = randn({2, 2 * r * r, 3, 2}, 40 + r);
    CHECK(testutil::bitwise_equal(pixel_unshuffle(pixel_shuffle(x, r), r), x));
    auto img = randn({1, 3, 2 * r, 3 * r}, 50 + r);
    CHECK(testutil::bitwise_equal(pixel_shuffle(pixel_unshuffle(img, r), r), img));
  }
}

TEST_CASE("global average pool") {
  CHECK(avg_pool_global(TensorD::full({1, 1, 3, 3}, 2.5)).item() == 2.5);
  CHECK(avg_pool_global(TensorD({1, 1, 2, 2}, {1, 3, 5, 7})).item() == 4);
  auto x = randn({2, 3, 4, 5}, 9);
  auto p = avg_pool_global(x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) acc += x.at({b, c, i, j});
      CHECK(p.at({b, c}) == doctest::Approx(acc / 20).epsilon(1e-14));
    }
}

TEST_CASE("interpolation") {
  auto n = upsample_nearest(TensorD({1, 1, 1, 1}, {3.5}), 2, 2, 2);
  CHECK(n.values() == std::vector<double>(4, 3.5));
  auto c = upsample_bilinear(TensorD::full({1, 2, 3, 3}, -1.5), 2, 5, 6);
  CHECK(c.shape() == Shape{1, 2, 5, 6});
  for (double v : c.data()) CHECK(v == doctest::Approx(-1.5));
  auto cropped = crop2d(randn({1, 1, 4, 4}, 1), 2, 3);
  CHECK(cropped.shape() == Shape{1, 1, 2, 3});
}

TEST_CASE("instance and channel norms") {
  auto x = randn({2, 3, 4, 5}, 17, 3.0);
  auto in = instance_norm(x);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) m += in.at({1, c, i, j});
    CHECK(std::abs(m / 20) < 1e-12);
  }
  auto cn = channel_norm(x);
  double m = 0;
  for (std::size_t c = 0; c < 3; ++c) m += cn.at({0, c, 2, 3});
  CHECK(std::abs(m) < 1e-12);
}

TEST_CASE("flop tally counts executed ops") {
  FlopTally tally;
  {
    ScopedFlopTally scope(tally);
    conv2d(TensorD::full({1, 1, 2, 2}, 1.0), TensorD::full({1, 1, 1, 1}, 1.0), OptTensor<double>());
  }
  CHECK(tally.conv == 4);
  CHECK(tally.total() == 4);

  FlopTally t2;
  {
    ScopedFlopTally scope(t2);
    linear(randn({2, 3, 4}, 1), randn({4, 5}, 2), OptTensor<double>());
    matmul(randn({2, 3, 4}, 1), randn({2, 4, 6}, 2));
    softmax(randn({2, 7}, 3), -1);
    add(randn({3}, 1), randn({3}, 2));
  }
  CHECK(t2.linear == 2 * 3 * 4 * 5);
  CHECK(t2.matmul == 2 * 3 * 4 * 6);
  CHECK(t2.other == 14);
  CHECK(t2.conv == 0);
}
