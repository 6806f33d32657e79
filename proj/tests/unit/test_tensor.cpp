#include <doctest.h>

#include <cmath>
#include <limits>

#include "gawwn/ops.hpp"

using namespace gawwn;

TEST_SUITE("tensor") {

TEST_CASE("zero extents are rejected") {
  CHECK_THROWS_AS(Tensor({2, 0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("copies share storage, clone does not") {
  Tensor a({3});
  Tensor b = a;
  b.values_mut()[1] = 5;
  CHECK(a.at(1) == 5);
  Tensor c = a.clone();
  c.values_mut()[1] = 7;
  CHECK(a.at(1) == 5);
}

TEST_CASE("gradient accumulates across reused inputs") {
  Tensor x({2}, {1.5, -2.0}, true);
  // y = sum(x*x + x) -> dy/dx = 2x + 1
  Tensor y = sum(add(mul(x, x), x));
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("graph trace is topologically ordered with the root last") {
  Tensor x({2}, {1, 2}, true);
  Tensor a = tanh(x);
  Tensor b = mul(a, x);
  Tensor loss = sum(b);
  auto graph = ComputeGraph::trace(loss);
  const auto& nodes = graph.nodes();
  REQUIRE(nodes.size() == 4);
  CHECK(nodes.back().same_as(loss));
  auto pos = [&](const Tensor& t) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].same_as(t)) return i;
    return nodes.size();
  };
  CHECK(pos(x) < pos(a));
  CHECK(pos(a) < pos(b));
  CHECK(pos(b) < pos(loss));
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
  }
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("backward needs a scalar") {
  Tensor x({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), UsageError);
}

TEST_CASE("non-finite outputs raise NumericError") {
  Tensor x({1}, {std::numeric_limits<double>::max()});
  CHECK_THROWS_AS(mul(x, x), NumericError);
}

TEST_CASE("repeated backward gives the same grads after zero_grad") {
  Tensor x({3}, {0.1, 0.2, 0.3}, true);
  auto loss = [&] { return sum(sigmoid(mul(x, x))); };
  backward(loss());
  std::vector<double> first(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(loss());
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == first[i]);
}

}
