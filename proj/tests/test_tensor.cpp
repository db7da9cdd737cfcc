#include <doctest.h>

#include <cmath>

#include "axiseg/graph.hpp"
#include "axiseg/ops.hpp"
#include "axiseg/tensor.hpp"
#include "support/fd_oracle.hpp"

using namespace axiseg;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape rejects non-positive extents") {
  CHECK_THROWS_AS(Shape({3, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Shape({-1}), std::invalid_argument);
  CHECK(Shape({2, 3, 4}).numel() == 24);
}

TEST_CASE("tensor data length must fill the shape") {
  CHECK_THROWS_AS(Tensor::from_values(Shape{2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  Tensor t = Tensor::from_values(Shape{2, 2}, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42), d(43);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ |= (c.next_u64() != d.next_u64());
  CHECK(differ);
}

TEST_CASE("backward of sum gives all-ones gradient and unit loss gradient") {
  Graph g;
  Tensor x = Tensor::from_values(Shape{2, 3}, {1, -2, 3, 4, -5, 6});
  x.attach(g);
  Tensor loss = sum(x);
  g.backward(loss);
  for (double v : g.grad(x)) CHECK(v == 1.0);
  CHECK(g.grad(loss)[0] == 1.0);
}

TEST_CASE("gradient of sum(x*x) matches the finite-difference oracle") {
  Tensor x = Tensor::from_values(Shape{1}, {3.0});
  Graph g;
  Tensor xt = x;
  xt.attach(g);
  g.backward(sum(mul(xt, xt)));
  double analytic = g.grad(xt)[0];
  CHECK(analytic == doctest::Approx(6.0).epsilon(1e-12));

  double numeric = testsupport::central_difference(x, 0, [&] {
    double v = x.at(0);
    return v * v;
  });
  CHECK(testsupport::rel_err(analytic, numeric) < 1e-4);
}

TEST_CASE("untouched parameter has exactly zero gradient") {
  Graph g;
  Tensor x = Tensor::from_values(Shape{2}, {1, 2});
  Tensor unused = Tensor::from_values(Shape{3}, {7, 8, 9});
  x.attach(g);
  unused.attach(g);
  g.backward(sum(x));
  for (double v : g.grad(unused)) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
  Graph g;
  Tensor x = Tensor::from_values(Shape{2}, {1, 2});
  x.attach(g);
  Tensor doubled = scalar_mul(x, 2.0);
  CHECK_THROWS_AS(g.backward(doubled), std::invalid_argument);

  Graph other;
  Tensor y = Tensor::scalar(1.0);
  y.attach(other);
  Tensor off_graph_loss = sum(y);
  CHECK_THROWS_AS(g.backward(off_graph_loss), std::invalid_argument);
}

TEST_CASE("forward never mutates previously recorded values") {
  Graph g;
  Tensor x = Tensor::from_values(Shape{2}, {1.5, -0.5});
  x.attach(g);
  Tensor y = mul(x, x);
  std::vector<double> y_before(y.values().begin(), y.values().end());
  Tensor z = add(y, y);
  Tensor loss = sum(relu(z));
  g.backward(loss);
  for (size_t i = 0; i < y_before.size(); ++i) CHECK(y.values()[i] == y_before[i]);
}

TEST_CASE("identical inputs produce bit-identical composite results") {
  auto run = [] {
    Rng rng(7);
    Tensor x = Tensor::uniform(Shape{3, 4}, -1, 1, rng);
    Tensor w = Tensor::uniform(Shape{3, 3}, -1, 1, rng);
    Tensor y = softmax_lastdim(matmul(w, x));
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("mixing graphs in one op is rejected") {
  Graph g1, g2;
  Tensor a = Tensor::from_values(Shape{2}, {1, 2});
  Tensor b = Tensor::from_values(Shape{2}, {3, 4});
  a.attach(g1);
  b.attach(g2);
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_SUITE_END();
