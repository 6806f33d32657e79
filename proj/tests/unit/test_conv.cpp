#include <doctest.h>

#include "gawwn/ops.hpp"
#include "gawwn/rng.hpp"
#include "oracles.hpp"

using namespace gawwn;

namespace {

struct ConvCase {
  std::size_t n, c, f, h, w, k, stride, pad;
};

ConvCase random_case(Rng& rng) {
  ConvCase cc{};
  cc.n = 1 + rng.index(3);
  cc.c = 1 + rng.index(4);
  cc.f = 1 + rng.index(4);
  cc.k = 1 + rng.index(4);
  cc.stride = 1 + rng.index(2);
  cc.pad = rng.index(cc.k);
  cc.h = cc.k + rng.index(6);
  cc.w = cc.k + rng.index(6);
  return cc;
}

}  // namespace

TEST_SUITE("conv") {

TEST_CASE("conv2d matches the direct loop on random geometries") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const ConvCase g = random_case(rng);
    Tensor x = rng.normal_tensor({g.n, g.c, g.h, g.w});
    Tensor w = rng.normal_tensor({g.f, g.c, g.k, g.k});
    Tensor y = conv2d(x, w, g.stride, g.pad);
    Tensor ref = oracle::conv2d(x, w, g.stride, g.pad);
    REQUIRE(y.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y.values(), ref.values()) < 1e-12);
  }
}

TEST_CASE("deconv2d matches the scatter loop on random geometries") {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    const ConvCase g = random_case(rng);
    Tensor x = rng.normal_tensor({g.n, g.c, g.h, g.w});
    Tensor w = rng.normal_tensor({g.c, g.f, g.k, g.k});
    Tensor y = deconv2d(x, w, g.stride, g.pad);
    Tensor ref = oracle::deconv2d(x, w, g.stride, g.pad);
    REQUIRE(y.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y.values(), ref.values()) < 1e-12);
  }
}

TEST_CASE("deconv2d is the adjoint of conv2d") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    ConvCase g = random_case(rng);
    // Choose H, W so the strided windows tile exactly.
    const std::size_t ho = 1 + rng.index(4), wo = 1 + rng.index(4);
    g.h = (ho - 1) * g.stride + g.k - 2 * g.pad;
    g.w = (wo - 1) * g.stride + g.k - 2 * g.pad;
    if (g.h == 0 || g.w == 0 || g.h > 100 || g.w > 100) continue;
    Tensor x = rng.normal_tensor({g.n, g.c, g.h, g.w});
    Tensor w = rng.normal_tensor({g.f, g.c, g.k, g.k});
    Tensor y = rng.normal_tensor({g.n, g.f, ho, wo});
    Tensor cx = conv2d(x, w, g.stride, g.pad);
    REQUIRE(cx.shape() == y.shape());
    const double lhs = oracle::inner(cx.values(), y.values());
    const double rhs = oracle::inner(x.values(), deconv2d(y, w, g.stride, g.pad).values());
    CHECK(std::abs(lhs - rhs) < 1e-9 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("conv2d backward equals deconv of the output grad") {
  Rng rng(14);
  Tensor x = rng.normal_tensor({2, 3, 6, 6});
  x.set_requires_grad(true);
  Tensor w = rng.normal_tensor({4, 3, 4, 4});
  Tensor gy = rng.normal_tensor({2, 4, 3, 3});
  backward(sum(mul(conv2d(x, w, 2, 1), gy)));
  CHECK(oracle::max_abs_diff(x.grad(), deconv2d(gy, w, 2, 1).values()) < 1e-12);
}

TEST_CASE("deconv with non-positive output extent is a GeometryError") {
  CHECK_THROWS_AS(deconv2d(Tensor({1, 1, 1, 1}), Tensor({1, 1, 2, 2}), 1, 1), GeometryError);
  CHECK_THROWS_AS(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), 1, 0), DimensionError);
}

TEST_CASE("pooling") {
  Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, -1, 7});
  Tensor mx = max_pool2d(x, 2, 2);
  CHECK(mx.shape() == Shape{1, 1, 1, 2});
  CHECK(mx.at(0) == 5);
  CHECK(mx.at(1) == 7);
  Tensor mp = mean_pool(x, 2, 2);
  CHECK(mp.at(0) == 13.0 / 4);
  CHECK(mp.at(1) == 8.0 / 4);
  Tensor odd({1, 1, 1, 7}, {1, 2, 3, 4, 5, 6, 7});
  CHECK(max_pool2d(odd, 1, 3).shape() == Shape{1, 1, 1, 2});
}

}
