#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "gawwn/ops.hpp"
#include "gemm.hpp"

namespace gawwn {

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t ho, wo;  // patch grid
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return n * ho * wo; }
};

// cols[(c*kh+i)*kw+j][b*P + oy*wo+ox] = image[b,c,oy*s-p+i, ox*s-p+j] (zero outside).
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t P = g.ho * g.wo, ncols = g.cols();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* plane = image + (b * g.c + c) * g.h * g.w;
          double* dst = row + b * P;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
            double* drow = dst + oy * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill_n(drow, g.wo, 0.0);
              continue;
            }
            const double* srow = plane + iy * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
              drow[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : srow[ix];
            }
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into the image buffer.
void col2im(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t P = g.ho * g.wo, ncols = g.cols();
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t b = 0; b < g.n; ++b) {
          double* plane = image + (b * g.c + c) * g.h * g.w;
          const double* src = row + b * P;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            double* drow = plane + iy * g.w;
            const double* srow = src + oy * g.wo;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) drow[ix] += srow[ox];
            }
          }
        }
      }
}

// [N, C, P] <-> [C, N*P]
void nchw_to_cm(const double* src, double* dst, std::size_t n, std::size_t c, std::size_t p) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (b * c + ch) * p, p, dst + ch * n * p + b * p);
}

void cm_to_nchw_add(const double* src, double* dst, std::size_t n, std::size_t c, std::size_t p) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* s = src + ch * n * p + b * p;
      double* d = dst + (b * c + ch) * p;
      for (std::size_t i = 0; i < p; ++i) d[i] += s[i];
    }
}

void require_image(const Tensor& x, const char* op) {
  if (x.rank() != 4)
    throw DimensionError(std::string(op) + ": expected N,C,H,W input, got " + shape_str(x.shape()));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t pad) {
  require_image(input, "conv2d");
  if (weight.rank() != 4) throw DimensionError("conv2d: weight must be F,C,kh,kw");
  if (stride == 0) throw GeometryError("conv2d: stride must be >= 1");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != is[1])
    throw DimensionError("conv2d: input has " + std::to_string(is[1]) + " channels, weight expects " +
                         std::to_string(ws[1]));
  if (ws[2] > is[2] + 2 * pad || ws[3] > is[3] + 2 * pad)
    throw GeometryError("conv2d: kernel larger than padded input");
  ConvGeometry g{is[0], is[1], is[2], is[3], ws[2], ws[3], stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  const std::size_t F = ws[0], P = g.ho * g.wo;

  auto cols = std::make_shared<std::vector<double>>(g.rows() * g.cols());
  im2col(g, input.values().data(), cols->data());
  std::vector<double> outmat(F * g.cols(), 0.0);
  detail::gemm(false, false, F, g.cols(), g.rows(), weight.values().data(), cols->data(),
               outmat.data());
  std::vector<double> out(g.n * F * P, 0.0);
  cm_to_nchw_add(outmat.data(), out.data(), g.n, F, P);

  return make_result({g.n, F, g.ho, g.wo}, std::move(out), "conv2d", {input, weight},
                     [g, F, P, cols](detail::TensorImpl& o) {
                       std::vector<double> dmat(F * g.cols());
                       nchw_to_cm(o.grad.data(), dmat.data(), g.n, F, P);
                       if (double* gw = grad_target(o.inputs[1]))
                         detail::gemm(false, true, F, g.rows(), g.cols(), dmat.data(), cols->data(), gw);
                       if (double* gx = grad_target(o.inputs[0])) {
                         std::vector<double> dcols(g.rows() * g.cols(), 0.0);
                         detail::gemm(true, false, g.rows(), g.cols(), F,
                                      o.inputs[1].values().data(), dmat.data(), dcols.data());
                         col2im(g, dcols.data(), gx);
                       }
                     });
}

Tensor deconv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t pad) {
  require_image(input, "deconv2d");
  if (weight.rank() != 4) throw DimensionError("deconv2d: weight must be C,F,kh,kw");
  if (stride == 0) throw GeometryError("deconv2d: stride must be >= 1");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws[0] != is[1])
    throw DimensionError("deconv2d: input has " + std::to_string(is[1]) +
                         " channels, weight expects " + std::to_string(ws[0]));
  const long ho = static_cast<long>((is[2] - 1) * stride + ws[2]) - 2 * static_cast<long>(pad);
  const long wo = static_cast<long>((is[3] - 1) * stride + ws[3]) - 2 * static_cast<long>(pad);
  if (ho <= 0 || wo <= 0) throw GeometryError("deconv2d: computed output extent is not positive");
  const std::size_t N = is[0], C = is[1], H = is[2], W = is[3], F = ws[1];
  // Conv geometry that maps the deconv output back onto the input grid.
  ConvGeometry g{N, F, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo), ws[2], ws[3],
                 stride, pad, H, W};
  const std::size_t HW = H * W;

  auto xmat = std::make_shared<std::vector<double>>(C * N * HW);
  nchw_to_cm(input.values().data(), xmat->data(), N, C, HW);
  std::vector<double> cols(g.rows() * g.cols(), 0.0);
  detail::gemm(true, false, g.rows(), g.cols(), C, weight.values().data(), xmat->data(), cols.data());
  std::vector<double> out(N * F * g.h * g.w, 0.0);
  col2im(g, cols.data(), out.data());

  return make_result({N, F, g.h, g.w}, std::move(out), "deconv2d", {input, weight},
                     [g, C, HW, xmat](detail::TensorImpl& o) {
                       double* gx = grad_target(o.inputs[0]);
                       double* gw = grad_target(o.inputs[1]);
                       if (!gx && !gw) return;
                       std::vector<double> dcols(g.rows() * g.cols());
                       im2col(g, o.grad.data(), dcols.data());
                       if (gw)
                         detail::gemm(false, true, C, g.rows(), g.cols(), xmat->data(), dcols.data(), gw);
                       if (gx) {
                         std::vector<double> dxmat(C * g.cols(), 0.0);
                         detail::gemm(false, false, C, g.cols(), g.rows(),
                                      o.inputs[1].values().data(), dcols.data(), dxmat.data());
                         cm_to_nchw_add(dxmat.data(), gx, g.n, C, HW);
                       }
                     });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2) throw DimensionError("add_channel_bias: input needs a channel axis");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), p = x.numel() / (n * c);
  auto xs = x.values();
  auto bs = bias.values();
  std::vector<double> out(xs.begin(), xs.end());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < p; ++i) out[(b * c + ch) * p + i] += bs[ch];
  return make_result(x.shape(), std::move(out), "add_channel_bias", {x, bias},
                     [n, c, p](detail::TensorImpl& o) {
                       if (double* gx = grad_target(o.inputs[0]))
                         for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
                       if (double* gb = grad_target(o.inputs[1]))
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t i = 0; i < p; ++i) gb[ch] += o.grad[(b * c + ch) * p + i];
                     });
}

Tensor max_pool2d(const Tensor& x, std::size_t kh, std::size_t kw) {
  require_image(x, "max_pool2d");
  if (kh == 0 || kw == 0) throw GeometryError("max_pool2d: window must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t ho = H / kh, wo = W / kw;
  if (ho == 0 || wo == 0) throw GeometryError("max_pool2d: window larger than input");
  auto xs = x.values();
  std::vector<double> out(N * C * ho * wo);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t plane = 0; plane < N * C; ++plane)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = plane * H * W + oy * kh * W + ox * kw;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t idx = plane * H * W + (oy * kh + i) * W + ox * kw + j;
            if (xs[idx] > xs[best]) best = idx;
          }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = xs[best];
        arg[o] = best;
      }
  return make_result({N, C, ho, wo}, std::move(out), "max_pool2d", {x},
                     [arg = std::move(arg)](detail::TensorImpl& o) {
                       if (double* g = grad_target(o.inputs[0]))
                         for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
                     });
}

Tensor mean_pool(const Tensor& x, std::size_t kh, std::size_t kw) {
  require_image(x, "mean_pool");
  if (kh == 0 || kw == 0) throw GeometryError("mean_pool: window must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t ho = H / kh, wo = W / kw;
  if (ho == 0 || wo == 0) throw GeometryError("mean_pool: window larger than input");
  const double inv = 1.0 / static_cast<double>(kh * kw);
  auto xs = x.values();
  std::vector<double> out(N * C * ho * wo, 0.0);
  for (std::size_t plane = 0; plane < N * C; ++plane)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j)
            acc += xs[plane * H * W + (oy * kh + i) * W + ox * kw + j];
        out[(plane * ho + oy) * wo + ox] = acc * inv;
      }
  return make_result({N, C, ho, wo}, std::move(out), "mean_pool", {x},
                     [N, C, H, W, ho, wo, kh, kw, inv](detail::TensorImpl& o) {
                       double* g = grad_target(o.inputs[0]);
                       if (!g) return;
                       for (std::size_t plane = 0; plane < N * C; ++plane)
                         for (std::size_t oy = 0; oy < ho; ++oy)
                           for (std::size_t ox = 0; ox < wo; ++ox) {
                             const double d = o.grad[(plane * ho + oy) * wo + ox] * inv;
                             for (std::size_t i = 0; i < kh; ++i)
                               for (std::size_t j = 0; j < kw; ++j)
                                 g[plane * H * W + (oy * kh + i) * W + ox * kw + j] += d;
                           }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, bool training, double momentum, double eps) {
  if (x.rank() != 2 && x.rank() != 4)
    throw DimensionError("batch_norm: expected [N,C] or [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.numel() / (N * C);
  if (gamma.numel() != C || beta.numel() != C || buffers.running_mean.numel() != C ||
      buffers.running_var.numel() != C)
    throw DimensionError("batch_norm: parameter length does not match " + std::to_string(C) +
                         " channels");
  const double m = static_cast<double>(N * P);
  auto xs = x.values();
  auto gs = gamma.values();
  auto bs = beta.values();
  std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
  if (training) {
    std::vector<double> var(C, 0.0);
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) mu[c] += xs[(b * C + c) * P + i];
    for (std::size_t c = 0; c < C; ++c) mu[c] /= m;
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < P; ++i) {
          const double d = xs[(b * C + c) * P + i] - mu[c];
          var[c] += d * d;
        }
    auto rm = buffers.running_mean.values_mut();
    auto rv = buffers.running_var.values_mut();
    for (std::size_t c = 0; c < C; ++c) {
      const double biased = var[c] / m;
      inv_std[c] = 1.0 / std::sqrt(biased + eps);
      const double unbiased = m > 1 ? var[c] / (m - 1) : biased;
      rm[c] = (1 - momentum) * rm[c] + momentum * mu[c];
      rv[c] = (1 - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    auto rm = buffers.running_mean.values();
    auto rv = buffers.running_var.values();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + eps);
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  std::vector<double> out(xs.size());
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t k = (b * C + c) * P + i;
        (*xhat)[k] = (xs[k] - mu[c]) * inv_std[c];
        out[k] = gs[c] * (*xhat)[k] + bs[c];
      }
  return make_result(x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
                     [N, C, P, m, training, xhat, inv_std](detail::TensorImpl& o) {
                       auto gs = o.inputs[1].values();
                       std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
                       for (std::size_t b = 0; b < N; ++b)
                         for (std::size_t c = 0; c < C; ++c)
                           for (std::size_t i = 0; i < P; ++i) {
                             const std::size_t k = (b * C + c) * P + i;
                             sum_dy[c] += o.grad[k];
                             sum_dy_xhat[c] += o.grad[k] * (*xhat)[k];
                           }
                       if (double* gg = grad_target(o.inputs[1]))
                         for (std::size_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
                       if (double* gb = grad_target(o.inputs[2]))
                         for (std::size_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
                       double* gx = grad_target(o.inputs[0]);
                       if (!gx) return;
                       for (std::size_t b = 0; b < N; ++b)
                         for (std::size_t c = 0; c < C; ++c) {
                           const double scale = gs[c] * inv_std[c];
                           for (std::size_t i = 0; i < P; ++i) {
                             const std::size_t k = (b * C + c) * P + i;
                             if (training)
                               gx[k] += scale * (o.grad[k] - sum_dy[c] / m -
                                                 (*xhat)[k] * sum_dy_xhat[c] / m);
                             else
                               gx[k] += scale * o.grad[k];
                           }
                         }
                     });
}

Tensor char_conv1d(std::span<const int> indices, std::size_t batch, std::size_t length,
                   const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 3) throw DimensionError("char_conv1d: weight must be F,alphabet,width");
  const std::size_t F = weight.dim(0), A = weight.dim(1), K = weight.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != F) throw DimensionError("char_conv1d: bias length mismatch");
  if (indices.size() != batch * length)
    throw DimensionError("char_conv1d: expected " + std::to_string(batch * length) + " indices");
  if (length < K) throw GeometryError("char_conv1d: sequence shorter than kernel");
  for (int id : indices)
    if (id >= static_cast<int>(A)) throw InputError("char_conv1d: symbol id out of alphabet");
  const std::size_t L = length - K + 1;
  auto ws = weight.values();
  auto bs = bias.values();
  // Kernel re-laid as [A, K, F] so the filter loop is contiguous.
  std::vector<double> wt(A * K * F);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t k = 0; k < K; ++k) wt[(a * K + k) * F + f] = ws[(f * A + a) * K + k];
  std::vector<double> acc(F);
  std::vector<double> out(batch * F * L);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      std::copy(bs.begin(), bs.end(), acc.begin());
      for (std::size_t k = 0; k < K; ++k) {
        const int id = indices[b * length + t + k];
        if (id < 0) continue;
        const double* col = wt.data() + (static_cast<std::size_t>(id) * K + k) * F;
        for (std::size_t f = 0; f < F; ++f) acc[f] += col[f];
      }
      for (std::size_t f = 0; f < F; ++f) out[(b * F + f) * L + t] = acc[f];
    }
  std::vector<int> ids(indices.begin(), indices.end());
  return make_result({batch, F, 1, L}, std::move(out), "char_conv1d", {weight, bias},
                     [ids = std::move(ids), batch, length, F, A, K, L](detail::TensorImpl& o) {
                       if (double* gw = grad_target(o.inputs[0]))
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t t = 0; t < L; ++t)
                             for (std::size_t k = 0; k < K; ++k) {
                               const int id = ids[b * length + t + k];
                               if (id < 0) continue;
                               for (std::size_t f = 0; f < F; ++f)
                                 gw[(f * A + static_cast<std::size_t>(id)) * K + k] +=
                                     o.grad[(b * F + f) * L + t];
                             }
                       if (double* gb = grad_target(o.inputs[1]))
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t f = 0; f < F; ++f)
                             for (std::size_t t = 0; t < L; ++t) gb[f] += o.grad[(b * F + f) * L + t];
                     });
}

}  // namespace gawwn
