#include <doctest.h>

#include <cmath>

#include "restv2/attention.hpp"
#include "restv2/errors.hpp"
#include "restv2/ops.hpp"
#include "test_util.hpp"

using namespace restv2;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::randn;

namespace {

EmsaConfig make_cfg(std::size_t dim, std::size_t heads, std::size_t r, UpsampleStrategy up) {
  EmsaConfig c;
  c.dim = dim;
  c.heads = heads;
  c.reduction = r;
  c.upsample = up;
  return c;
}

using Mat = std::vector<std::vector<double>>;

// x (n, d) row-major tokens of one image -> rows of x W + b.
Mat affine_rows(const Mat& x, const TensorD& w, const TensorD& b) {
  Mat out(x.size(), std::vector<double>(w.dim(1)));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.dim(1); ++o) {
      double acc = b.data()[o];
      for (std::size_t c = 0; c < w.dim(0); ++c) acc += x[i][c] * w.at({c, o});
      out[i][o] = acc;
    }
  return out;
}

// Attention for batch item 0 written with explicit loops.
Mat dense_emsa(const TensorD& x, const AttentionWeights<double>& w, const EmsaConfig& cfg, Spatial sp) {
  const std::size_t d = cfg.dim, k = cfg.heads, dk = d / k, r = cfg.reduction;
  Mat tokens(sp.tokens(), std::vector<double>(d));
  for (std::size_t i = 0; i < sp.tokens(); ++i)
    for (std::size_t c = 0; c < d; ++c) tokens[i][c] = x.at({0, i, c});

  Mat reduced = tokens;
  if (r > 1) {
    const std::size_t kk = r + 1, pad = r / 2;
    const std::size_t ho = (sp.height + 2 * pad - kk) / r + 1, wo = (sp.width + 2 * pad - kk) / r + 1;
    reduced.assign(ho * wo, std::vector<double>(d));
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t c = 0; c < d; ++c) {
          double acc = w.down_bias.data()[c];
          for (std::size_t ky = 0; ky < kk; ++ky)
            for (std::size_t kx = 0; kx < kk; ++kx) {
              const long iy = long(oy * r + ky) - long(pad), ix = long(ox * r + kx) - long(pad);
              if (iy < 0 || ix < 0 || iy >= long(sp.height) || ix >= long(sp.width)) continue;
              acc += tokens[iy * sp.width + ix][c] * w.down_weight.at({c, 0, ky, kx});
            }
          reduced[oy * wo + ox][c] = acc;
        }
    for (auto& row : reduced) {
      double m = 0, v = 0;
      for (double e : row) m += e;
      m /= d;
      for (double e : row) v += (e - m) * (e - m);
      v /= d;
      for (std::size_t c = 0; c < d; ++c) {
        row[c] = (row[c] - m) / std::sqrt(v + kNormEps) * w.down_gamma.data()[c] + w.down_beta.data()[c];
      }
    }
  }
  const Mat q = affine_rows(tokens, w.q_weight, w.q_bias);
  const Mat kx = affine_rows(reduced, w.k_weight, w.k_bias);
  const Mat v = affine_rows(reduced, w.v_weight, w.v_bias);
  Mat ctx(tokens.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < k; ++h)
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      std::vector<double> logit(reduced.size());
      double mx = -INFINITY;
      for (std::size_t j = 0; j < reduced.size(); ++j) {
        double acc = 0;
        for (std::size_t e = 0; e < dk; ++e) acc += q[i][h * dk + e] * kx[j][h * dk + e];
        logit[j] = acc / std::sqrt(double(dk));
        mx = std::max(mx, logit[j]);
      }
      double z = 0;
      for (auto& l : logit) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < reduced.size(); ++j)
        for (std::size_t e = 0; e < dk; ++e) ctx[i][h * dk + e] += logit[j] / z * v[j][h * dk + e];
    }
  return affine_rows(ctx, w.proj_weight, w.proj_bias);
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(make_cfg(6, 4, 1, UpsampleStrategy::none).validate(), ConfigError);
  CHECK_THROWS_AS(make_cfg(8, 2, 3, UpsampleStrategy::none).validate(), ConfigError);
  auto c = make_cfg(8, 2, 2, UpsampleStrategy::none);
  c.window = WindowStyle::win;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.window_size = 4;
  CHECK_NOTHROW(c.validate());
  CHECK(make_cfg(8, 2, 4, UpsampleStrategy::none).reduced({7, 8}) == Spatial{2, 2});
  CHECK(make_cfg(8, 2, 8, UpsampleStrategy::none).reduced({56, 56}) == Spatial{7, 7});
  CHECK(make_cfg(8, 2, 1, UpsampleStrategy::none).reduced({5, 3}) == Spatial{5, 3});
}

TEST_CASE("weight shapes are checked") {
  auto cfg = make_cfg(8, 2, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(cfg, 1);
  CHECK_NOTHROW(w.check(cfg));
  w.up_weight = randn({8, 1, 3, 3}, 1);
  CHECK_THROWS_WITH_AS(w.check(cfg), doctest::Contains("up_weight"), DimensionError);
}

TEST_CASE("single token attention returns out_proj(V)") {
  auto cfg = make_cfg(4, 2, 1, UpsampleStrategy::none);
  auto w = random_attention_weights<double>(cfg, 3);
  auto x = randn({1, 1, 4}, 4);
  auto v = linear(x, w.v_weight, OptTensor<double>(w.v_bias));
  auto expect = linear(v, w.proj_weight, OptTensor<double>(w.proj_bias));
  CHECK(max_abs_diff(emsa_forward(x, w, cfg, {1, 1}), expect) < 1e-15);

  cfg.upsample = UpsampleStrategy::nearest;
  CHECK(max_abs_diff(emsav2_forward(x, w, cfg, {1, 1}), add(expect, v)) < 1e-15);
}

TEST_CASE("uniform attention averages V") {
  auto cfg = make_cfg(4, 2, 1, UpsampleStrategy::none);
  auto w = random_attention_weights<double>(cfg, 5);
  w.k_weight = TensorD::zeros({4, 4});  // every key equals k_bias, so each row of logits is constant
  auto x = randn({1, 6, 4}, 6);
  auto v = linear(x, w.v_weight, OptTensor<double>(w.v_bias));
  std::vector<double> mean(4, 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) mean[c] += v.at({0, i, c}) / 6;
  auto m = linear(TensorD({1, 1, 4}, mean), w.proj_weight, OptTensor<double>(w.proj_bias));
  auto y = emsa_forward(x, w, cfg, {2, 3});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(y.at({0, i, c}) - m.at({0, 0, c})) < 1e-14);
}

TEST_CASE("EMSA matches a dense loop reference") {
  for (auto [r, h, wd, heads] : {std::tuple{2ul, 4ul, 4ul, 2ul}, std::tuple{4ul, 7ul, 5ul, 1ul},
                                 std::tuple{1ul, 3ul, 3ul, 4ul}, std::tuple{8ul, 9ul, 8ul, 2ul}}) {
    auto cfg = make_cfg(8, heads, r, UpsampleStrategy::none);
    auto w = random_attention_weights<double>(cfg, 7 + r);
    const Spatial sp{h, wd};
    auto x = randn({1, sp.tokens(), 8}, 8 + r);
    auto y = emsa_forward(x, w, cfg, sp);
    auto ref = dense_emsa(x, w, cfg, sp);
    double err = 0;
    for (std::size_t i = 0; i < sp.tokens(); ++i)
      for (std::size_t c = 0; c < 8; ++c) err = std::max(err, std::abs(y.at({0, i, c}) - ref[i][c]));
    INFO("r=" << r);
    CHECK(err < 1e-12);
  }
}

TEST_CASE("disabling the upsample branch reproduces EMSA bitwise") {
  auto cfg = make_cfg(8, 2, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(cfg, 9);
  auto x = randn({2, 30, 8}, 10);
  auto off = cfg;
  off.upsample = UpsampleStrategy::none;
  CHECK(bitwise_equal(emsav2_forward(x, w, off, {5, 6}), emsa_forward(x, w, cfg, {5, 6})));
}

TEST_CASE("EMSAv2 is the sum of its two branches") {
  for (auto up : {UpsampleStrategy::pixel_shuffle, UpsampleStrategy::nearest, UpsampleStrategy::bilinear}) {
    auto cfg = make_cfg(8, 2, 4, up);
    auto w = random_attention_weights<double>(cfg, 11);
    auto x = randn({1, 64, 8}, 12);
    const Spatial sp{8, 8};
    const auto full = emsav2_forward(x, w, cfg, sp);
    // independently recomputed V and Up(V)
    auto off = cfg;
    off.upsample = UpsampleStrategy::none;
    const auto attn = emsa_forward(x, w, off, sp);
    auto img = tokens_to_image(x, 8, 8);
    auto down = conv2d(img, w.down_weight, OptTensor<double>(w.down_bias), {4, 2, 8});
    auto xr = layer_norm(image_to_tokens(down), w.down_gamma, w.down_beta);
    auto v = linear(xr, w.v_weight, OptTensor<double>(w.v_bias));
    const auto up_term = upsample_branch(v, w, cfg, cfg.reduced(sp), sp);
    CHECK(bitwise_equal(full, add(attn, up_term)));
  }
}

TEST_CASE("upsample branch") {
  auto cfg = make_cfg(1, 1, 2, UpsampleStrategy::nearest);
  AttentionWeights<double> none;
  auto v = TensorD({1, 1, 1}, {2.5});
  CHECK(upsample_branch(v, none, cfg, {1, 1}, {2, 2}).values() == std::vector<double>(4, 2.5));

  cfg.upsample = UpsampleStrategy::none;
  const auto zero = upsample_branch(v, none, cfg, {1, 1}, {2, 2});
  for (double e : zero.data()) CHECK(e == 0.0);

  // pixel shuffle: depth-wise 3x3 expansion then rearrangement, checked per output pixel
  auto pcfg = make_cfg(2, 1, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(pcfg, 13);
  auto vv = randn({1, 6, 2}, 14);  // 2x3 reduced map
  auto out = upsample_branch(vv, w, pcfg, {2, 3}, {3, 5});
  CHECK(out.shape() == Shape{1, 15, 2});
  for (std::size_t oy = 0; oy < 3; ++oy)
    for (std::size_t ox = 0; ox < 5; ++ox)
      for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t i = oy / 2, j = ox / 2, p = oy % 2, q = ox % 2;
        const std::size_t ch = c * 4 + p * 2 + q;  // expanded channel, group c
        double acc = w.up_bias.data()[ch];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const long y = long(i) + ky - 1, x = long(j) + kx - 1;
            if (y < 0 || x < 0 || y >= 2 || x >= 3) continue;
            acc += vv.at({0, std::size_t(y * 3 + x), c}) * w.up_weight.at({ch, 0, std::size_t(ky), std::size_t(kx)});
          }
        CHECK(std::abs(out.at({0, oy * 5 + ox, c}) - acc) < 1e-14);
      }
}

TEST_CASE("MHIM") {
  SUBCASE("identity mixing with identity norm is a pass-through") {
    for (std::size_t k : {1ul, 4ul}) {
      auto attn = randn({2, k, 5, 3}, 15);
      std::vector<double> eye(k * k, 0.0);
      for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
      auto y = mhim_apply(attn, TensorD({k, k, 1, 1}, eye), TensorD::zeros({k}), MhimNorm::identity);
      CHECK(bitwise_equal(y, attn));
    }
  }
  SUBCASE("k=2 mixing matches a loop") {
    auto attn = randn({1, 2, 3, 4}, 16), wt = randn({2, 2, 1, 1}, 17), b = randn({2}, 18);
    auto y = mhim_mix(attn, wt, b);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          double acc = b.data()[h];
          for (std::size_t g = 0; g < 2; ++g) acc += wt.at({h, g, 0, 0}) * attn.at({0, g, i, j});
          CHECK(std::abs(y.at({0, h, i, j}) - acc) < 1e-15);
        }
    auto ln = mhim_reweight(y, MhimNorm::layer);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(ln.at({0, 0, i, 1}) + ln.at({0, 1, i, 1})) < 1e-9);
  }
  SUBCASE("identity-initialized MHIM inside attention equals no MHIM") {
    auto cfg = make_cfg(8, 4, 2, UpsampleStrategy::pixel_shuffle);
    auto w = random_attention_weights<double>(cfg, 19);
    auto m = cfg;
    m.mhim = true;
    m.norm_kind = MhimNorm::identity;
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    w.mhim_weight = TensorD({4, 4, 1, 1}, eye);
    w.mhim_bias = TensorD::zeros({4});
    auto x = randn({2, 20, 8}, 20);
    CHECK(bitwise_equal(emsav2_forward(x, w, m, {4, 5}), emsav2_forward(x, w, cfg, {4, 5})));
  }
}

TEST_CASE("layout errors") {
  auto cfg = make_cfg(4, 1, 1, UpsampleStrategy::none);
  auto w = random_attention_weights<double>(cfg, 1);
  CHECK_THROWS_AS(emsa_forward(randn({1, 5, 4}, 1), w, cfg, {2, 3}), LayoutError);
}

TEST_CASE("window partition") {
  SUBCASE("exact fit is a single window") {
    auto x = randn({1, 16, 3}, 21);
    auto [win, meta] = window_partition(x, {4, 4}, 4);
    CHECK(meta.window_count() == 1);
    CHECK(meta.padded == Spatial{4, 4});
    CHECK(bitwise_equal(win, x));
  }
  SUBCASE("one past the window pads to four windows") {
    const std::size_t ws = 4;
    auto x = randn({2, 25, 3}, 22);
    auto [win, meta] = window_partition(x, {ws + 1, ws + 1}, ws);
    CHECK(meta.original == Spatial{5, 5});
    CHECK(meta.padded == Spatial{8, 8});
    CHECK(meta.window_count() == 4);
    CHECK(win.shape() == Shape{8, 16, 3});
    // window 1 of item 0 covers columns 4..7: its first token is x[0, 4], the rest is padding
    CHECK(win.at({1, 0, 2}) == x.at({0, 4, 2}));
    CHECK(win.at({1, 1, 2}) == 0.0);
    CHECK(bitwise_equal(window_merge(win, meta), x));
  }
  SUBCASE("random geometries round trip") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t ws = 1 + rng() % 5;
      const Spatial sp{1 + rng() % (3 * ws), 1 + rng() % (3 * ws)};
      auto x = randn({1 + rng() % 2, sp.tokens(), 2}, 100 + trial);
      auto [win, meta] = window_partition(x, sp, ws);
      CHECK(bitwise_equal(window_merge(win, meta), x));
    }
  }
  SUBCASE("inconsistent metadata is rejected") {
    auto [win, meta] = window_partition(randn({1, 9, 2}, 1), {3, 3}, 2);
    auto bad = meta;
    bad.batch = 2;
    CHECK_THROWS_AS(window_merge(win, bad), LayoutError);
  }
}

TEST_CASE("style routing") {
  StyleContext mid{0, 0, false}, last{0, 1, true};
  CHECK_FALSE(uses_windows(WindowStyle::global, mid));
  CHECK(uses_windows(WindowStyle::win, last));
  CHECK(uses_windows(WindowStyle::cwin, last));
  CHECK(uses_windows(WindowStyle::hwin, mid));
  CHECK_FALSE(uses_windows(WindowStyle::hwin, last));

  auto cfg = make_cfg(8, 2, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(cfg, 24);
  auto x = randn({2, 36, 8}, 25);
  CHECK(bitwise_equal(styled_block_attention(x, w, cfg, {6, 6}, mid), emsav2_forward(x, w, cfg, {6, 6})));
}

TEST_CASE("windowed attention equals global when one window covers the map") {
  auto cfg = make_cfg(8, 2, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(cfg, 26);
  auto x = randn({2, 36, 8}, 27);
  auto win = cfg;
  win.window = WindowStyle::win;
  win.window_size = 6;
  CHECK(bitwise_equal(styled_block_attention(x, w, win, {6, 6}, {}), emsav2_forward(x, w, cfg, {6, 6})));
}

TEST_CASE("each window attends only to its own tokens") {
  const std::size_t ws = 4;
  auto cfg = make_cfg(8, 2, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(cfg, 28);
  auto x = randn({1, 64, 8}, 29);
  auto win = cfg;
  win.window = WindowStyle::win;
  win.window_size = ws;
  auto y = styled_block_attention(x, w, win, {8, 8}, {});
  for (std::size_t wy = 0; wy < 2; ++wy)
    for (std::size_t wx = 0; wx < 2; ++wx) {
      std::vector<double> local;
      for (std::size_t i = 0; i < ws; ++i)
        for (std::size_t j = 0; j < ws; ++j)
          for (std::size_t c = 0; c < 8; ++c) local.push_back(x.at({0, (wy * ws + i) * 8 + wx * ws + j, c}));
      auto expect = emsav2_forward(TensorD({1, ws * ws, 8}, local), w, cfg, {ws, ws});
      double err = 0;
      for (std::size_t i = 0; i < ws; ++i)
        for (std::size_t j = 0; j < ws; ++j)
          for (std::size_t c = 0; c < 8; ++c)
            err = std::max(err, std::abs(y.at({0, (wy * ws + i) * 8 + wx * ws + j, c}) - expect.at({0, i * ws + j, c})));
      CHECK(err < 1e-14);
    }
}

TEST_CASE("attention-free branch") {
  auto cfg = make_cfg(4, 1, 2, UpsampleStrategy::pixel_shuffle);
  auto w = random_attention_weights<double>(cfg, 30);
  auto x = randn({1, 16, 4}, 31);
  auto y = convnet_branch_forward(x, w, cfg, {4, 4});
  auto br = attention_branches(x, w, cfg, {4, 4});
  auto expect = linear(br.upsample, w.proj_weight, OptTensor<double>(w.proj_bias));
  CHECK(max_abs_diff(y, expect) < 1e-15);
}

TEST_CASE("float and double paths agree") {
  auto cfg = make_cfg(8, 2, 2, UpsampleStrategy::pixel_shuffle);
  auto wd = random_attention_weights<double>(cfg, 32);
  AttentionWeights<float> wf = random_attention_weights<float>(cfg, 32);
  auto x = randn({1, 20, 8}, 33);
  auto yd = emsav2_forward(x, wd, cfg, {4, 5});
  auto yf = emsav2_forward(x.cast<float>(), wf, cfg, {4, 5});
  CHECK(max_abs_diff(yf.cast<double>(), yd) < 1e-4);
}
