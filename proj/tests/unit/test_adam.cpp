#include <doctest.h>

#include <cmath>
#include <limits>

#include "gawwn/adam.hpp"
#include "gawwn/ops.hpp"

using namespace gawwn;

TEST_SUITE("adam") {

TEST_CASE("matches a hand-rolled bias-corrected update") {
  Tensor p({2}, {1.0, -2.0}, true);
  AdamHyper hyper;
  AdamState state({p}, hyper);
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (int t = 1; t <= 5; ++t) {
    state.zero_grad();
    backward(sum(mul(p, mul(p, p))));  // grad = 3 p^2
    double g[2];
    for (int i = 0; i < 2; ++i) {
      g[i] = 3 * ref[i] * ref[i];
      m[i] = hyper.beta1 * m[i] + (1 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1 - hyper.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(hyper.beta1, t));
      const double vh = v[i] / (1 - std::pow(hyper.beta2, t));
      ref[i] -= hyper.learning_rate * mh / (std::sqrt(vh) + hyper.epsilon);
    }
    adam_step(state);
    CHECK(std::abs(p.at(0) - ref[0]) < 1e-15);
    CHECK(std::abs(p.at(1) - ref[1]) < 1e-15);
  }
  CHECK(state.step_count() == 5);
}

TEST_CASE("defaults follow the DCGAN recipe") {
  AdamHyper h;
  CHECK(h.learning_rate == 2e-4);
  CHECK(h.beta1 == 0.5);
  CHECK(h.beta2 == 0.999);
}

TEST_CASE("first step moves every coordinate by about the learning rate") {
  Tensor p({3}, {0.0, 0.0, 0.0}, true);
  AdamState state({p});
  auto g = p.grad_mut();
  g[0] = 1e-3;
  g[1] = -50.0;
  g[2] = 7.0;
  adam_step(state);
  CHECK(p.at(0) == doctest::Approx(-2e-4).epsilon(1e-4));
  CHECK(p.at(1) == doctest::Approx(2e-4).epsilon(1e-4));
  CHECK(p.at(2) == doctest::Approx(-2e-4).epsilon(1e-4));
}

TEST_CASE("non-finite gradient aborts before touching parameters") {
  Tensor a({1}, {1.0}, true), b({1}, {2.0}, true);
  AdamState state({a, b});
  a.grad_mut()[0] = 1.0;
  b.grad_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(state), TrainingError);
  CHECK(a.at(0) == 1.0);
  CHECK(state.step_count() == 0);
}

}
