#pragma once

// Brute-force reference implementations used as test oracles. Each one is
// written straight from the defining sum with no shared code from the library.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "gawwn/rng.hpp"
#include "gawwn/tensor.hpp"

namespace oracle {

using gawwn::Shape;
using gawwn::Tensor;

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Direct 7-loop convolution (cross-correlation) with zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(N * F * Ho * Wo, 0.0);
  auto xv = x.values();
  auto wv = w.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                const long xx = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                acc += xv[((n * C + c) * H + y) * W + xx] * wv[((f * C + c) * kh + i) * kw + j];
              }
          out[((n * F + f) * Ho + oy) * Wo + ox] = acc;
        }
  return Tensor({N, F, Ho, Wo}, std::move(out));
}

// Transposed convolution by scattering every input pixel through the kernel.
inline Tensor deconv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H - 1) * stride + kh - 2 * pad, Wo = (W - 1) * stride + kw - 2 * pad;
  std::vector<double> out(N * F * Ho * Wo, 0.0);
  auto xv = x.values();
  auto wv = w.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long oy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ox = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (oy < 0 || ox < 0 || oy >= static_cast<long>(Ho) || ox >= static_cast<long>(Wo)) continue;
                out[((n * F + f) * Ho + oy) * Wo + ox] +=
                    xv[((n * C + c) * H + y) * W + xx] * wv[((c * F + f) * kh + i) * kw + j];
              }
  return Tensor({N, F, Ho, Wo}, std::move(out));
}

// Bilinear sampling written per output pixel from the 4-neighbour formula,
// pixel centers at (2i+1)/extent - 1, zeros outside.
inline std::vector<double> grid_sample(const std::vector<double>& img, std::size_t C, std::size_t H,
                                       std::size_t W, const double* theta, std::size_t Ho,
                                       std::size_t Wo) {
  std::vector<double> out(C * Ho * Wo, 0.0);
  auto at = [&](std::size_t c, long y, long x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return 0.0;
    return img[(c * H + y) * W + x];
  };
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      const double u = (2.0 * j + 1.0) / Wo - 1.0, v = (2.0 * i + 1.0) / Ho - 1.0;
      const double xs = theta[0] * u + theta[1] * v + theta[2];
      const double ys = theta[3] * u + theta[4] * v + theta[5];
      const double px = ((xs + 1.0) * W - 1.0) / 2.0, py = ((ys + 1.0) * H - 1.0) / 2.0;
      const long x0 = static_cast<long>(std::floor(px)), y0 = static_cast<long>(std::floor(py));
      const double ax = px - std::floor(px), ay = py - std::floor(py);
      for (std::size_t c = 0; c < C; ++c)
        out[(c * Ho + i) * Wo + j] = at(c, y0, x0) * (1 - ax) * (1 - ay) + at(c, y0, x0 + 1) * ax * (1 - ay) +
                                     at(c, y0 + 1, x0) * (1 - ax) * ay + at(c, y0 + 1, x0 + 1) * ax * ay;
    }
  return out;
}

inline double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
