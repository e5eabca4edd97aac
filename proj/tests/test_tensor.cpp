#include <doctest.h>

#include "restv2/errors.hpp"
#include "restv2/ops.hpp"
#include "restv2/tape.hpp"
#include "restv2/tensor.hpp"
#include "test_util.hpp"

using namespace restv2;

TEST_CASE("shape and buffer length agree") {
  TensorD t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.at({1, 2}) == 6);
  CHECK_THROWS_AS(TensorD({2, 3}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.dim(2), DimensionError);
  CHECK_THROWS_AS(t.at({2, 0}), DimensionError);
  CHECK(numel({}) == 1);
  CHECK(shape_str({2, 3}) == "(2, 3)");
}

TEST_CASE("factories") {
  auto z = TensorD::zeros({2, 2});
  auto f = TensorD::full({3}, 2.5);
  auto s = TensorD::scalar(4.0);
  for (double v : z.data()) CHECK(v == 0.0);
  for (double v : f.data()) CHECK(v == 2.5);
  CHECK(s.item() == 4.0);
  CHECK_THROWS_AS(f.item(), UsageError);
}

TEST_CASE("copies share the node, detach does not") {
  TensorD a({2}, {1, 2}, true);
  TensorD b = a;
  CHECK(a.same_node(b));
  auto c = a.detach();
  CHECK_FALSE(c.same_node(a));
  CHECK(c.values() == a.values());
  CHECK_FALSE(c.requires_grad());
}

TEST_CASE("cast between precisions") {
  TensorD a({3}, {0.5, -1.25, 3.0});
  auto f = a.cast<float>();
  CHECK(f.shape() == a.shape());
  CHECK(f.data()[1] == -1.25f);
  CHECK(f.cast<double>().values() == a.values());
}

TEST_CASE("token and image layouts round trip") {
  auto img = testutil::randn({2, 5, 3, 4}, 1);
  auto tok = image_to_tokens(img);
  CHECK(tok.shape() == Shape{2, 12, 5});
  // token (b, h*W + w, c) holds image (b, c, h, w)
  CHECK(tok.at({1, 2 * 4 + 3, 4}) == img.at({1, 4, 2, 3}));
  CHECK(testutil::bitwise_equal(tokens_to_image(tok, 3, 4), img));
  CHECK_THROWS_AS(tokens_to_image(tok, 4, 4), LayoutError);
}

TEST_CASE("backward of sum gives ones") {
  Tape<double> tape;
  TensorD x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  tape.backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x*x) gives 2x") {
  Tape<double> tape;
  auto x = testutil::randn({4}, 3).detach(true);
  tape.backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]).epsilon(1e-15));
}

TEST_CASE("repeated backward accumulates into leaves") {
  TensorD x({3}, {1, -2, 0.5}, true);
  {
    Tape<double> tape;
    tape.backward(sum(scale(x, 3.0)));
  }
  {
    Tape<double> tape;
    tape.backward(sum(scale(x, 3.0)));
  }
  for (double g : x.grad()) CHECK(g == 6.0);
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("a value consumed twice receives both contributions") {
  Tape<double> tape;
  TensorD x({2}, {1.5, -0.5}, true);
  auto y = add(x, x);
  tape.backward(sum(mul(y, x)));  // 2 x^2 -> 4x
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tape<double> tape;
  TensorD x({2}, {1, 2}, true);
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), UsageError);
}

TEST_CASE("nothing is recorded without an active tape") {
  TensorD x({2}, {1, 2}, true);
  auto y = scale(x, 2.0);
  CHECK(Tape<double>::active() == nullptr);
  Tape<double> tape;
  CHECK(Tape<double>::active() == &tape);
  auto z = scale(x, 2.0);
  CHECK(tape.size() == 1);
  (void)y;
  (void)z;
}
