#include <doctest.h>

#include <cmath>

#include "restv2/grad_suite.hpp"
#include "restv2/gradcheck.hpp"
#include "restv2/model.hpp"
#include "restv2/ops.hpp"
#include "restv2/tape.hpp"
#include "test_util.hpp"

using namespace restv2;
using testutil::randn;

TEST_CASE("finite differences of simple functions") {
  auto x = randn({5}, 1);
  auto g = finite_diff_grad([](const TensorD& t) { return sum(t).item(); }, x);
  for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

  const double step = 1e-5;
  auto sq = [](const TensorD& t) { return t.item() * t.item(); };
  CHECK(std::abs(finite_diff_at(sq, TensorD::scalar(3.0), 0, step) - 6.0) < 9 * step * step);
}

TEST_CASE("relative error uses a floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 1e-9) == doctest::Approx(1e-3));
}

TEST_CASE("backward agrees with finite differences on a small MLP") {
  auto x = randn({3, 4}, 2), w1 = randn({4, 6}, 3), b1 = randn({6}, 4), w2 = randn({6, 2}, 5);
  auto loss = [&](const TensorD& w) {
    auto h = gelu(linear(x, w, OptTensor<double>(b1)));
    return sum(mul(linear(h, w2, OptTensor<double>()), linear(h, w2, OptTensor<double>())));
  };
  auto leaf = w1.detach(true);
  {
    Tape<double> tape;
    tape.backward(loss(leaf));
  }
  auto numeric = finite_diff_grad([&](const TensorD& w) { return loss(w).item(); }, w1);
  for (std::size_t i = 0; i < w1.size(); ++i) CHECK(relative_error(leaf.grad()[i], numeric.data()[i]) < 1e-7);
}

TEST_CASE("every op passes the gradient check") {
  const auto cases = op_gradient_suite(42);
  CHECK(cases.size() > 30);
  for (const auto& c : cases) {
    INFO(c.name << " max rel err " << c.result.max_rel_error());
    CHECK(c.result.passed(1e-4));
  }
}

TEST_CASE("gradient suite is seed-stable") {
  for (std::uint64_t seed : {1ull, 9ull}) {
    CHECK(suite_max_error(op_gradient_suite(seed)) < 1e-4);
  }
}

TEST_CASE("miniature model gradient check") {
  const auto c = mini_model_gradcheck(42, 2);
  INFO("max rel err " << c.result.max_rel_error());
  CHECK(c.result.passed(1e-4));
  // the image plus every parameter tensor
  CHECK(c.result.entries.size() == 1 + parameter_plan(preset("mini")).size());
}
