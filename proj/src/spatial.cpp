#include "gawwn/spatial.hpp"

#include <cmath>
#include <string>

namespace gawwn {

namespace {

constexpr double kBoxTolerance = 1e-9;

// Inputs of rank 3 are treated as a batch of one and squeezed back afterwards.
Tensor as_batch(const Tensor& x, const char* op) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  throw DimensionError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
}

Tensor restore_rank(const Tensor& y, const Tensor& original) {
  if (original.rank() == 4) return y;
  return reshape(y, {y.dim(1), y.dim(2), y.dim(3)});
}

// Source coordinates within roundoff of a pixel center are snapped onto it, so
// the identity and grid-aligned crops reproduce pixels exactly.
double snap(double p) {
  const double r = std::round(p);
  return std::abs(p - r) < 1e-9 ? r : p;
}

void require_box_count(const Tensor& x, std::span<const BBox> boxes, const char* op) {
  if (boxes.size() != x.dim(0))
    throw DimensionError(std::string(op) + ": " + std::to_string(boxes.size()) + " boxes for batch of " +
                         std::to_string(x.dim(0)));
}

}  // namespace

void BBox::validate() const {
  if (!(w > 0) || !(h > 0)) throw GeometryError("bbox: width and height must be positive");
  if (!std::isfinite(x0) || !std::isfinite(y0) || !std::isfinite(w) || !std::isfinite(h))
    throw GeometryError("bbox: non-finite coordinate");
  if (x0 < -kBoxTolerance || y0 < -kBoxTolerance || x0 + w > 1 + kBoxTolerance ||
      y0 + h > 1 + kBoxTolerance)
    throw GeometryError("bbox: box leaves the unit square");
}

bool BBox::contains_center(std::size_t row, std::size_t col, std::size_t grid) const {
  const double cy = (static_cast<double>(row) + 0.5) / static_cast<double>(grid);
  const double cx = (static_cast<double>(col) + 0.5) / static_cast<double>(grid);
  return cx >= x0 && cx <= x0 + w && cy >= y0 && cy <= y0 + h;
}

AffineParams bbox_to_affine_into(const BBox& box) {
  box.validate();
  // Box center in [-1,1] space.
  const double cx = 2 * box.x0 + box.w - 1;
  const double cy = 2 * box.y0 + box.h - 1;
  return {{1 / box.w, 0, -cx / box.w, 0, 1 / box.h, -cy / box.h}};
}

AffineParams bbox_to_affine_crop(const BBox& box) {
  box.validate();
  const double cx = 2 * box.x0 + box.w - 1;
  const double cy = 2 * box.y0 + box.h - 1;
  return {{box.w, 0, cx, 0, box.h, cy}};
}

Tensor affine_tensor(std::span<const AffineParams> affines) {
  if (affines.empty()) throw UsageError("affine_tensor: no affines");
  std::vector<double> values;
  for (const auto& a : affines) {
    for (double v : a.theta)
      if (!std::isfinite(v)) throw GeometryError("affine: non-finite entry");
    values.insert(values.end(), a.theta.begin(), a.theta.end());
  }
  return Tensor({affines.size(), 2, 3}, std::move(values));
}

Tensor grid_sample_bilinear(const Tensor& input, const Tensor& theta, std::size_t out_h,
                            std::size_t out_w) {
  if (input.rank() != 4) throw DimensionError("grid_sample: input must be N,C,H,W");
  if (theta.rank() != 3 || theta.dim(0) != input.dim(0) || theta.dim(1) != 2 || theta.dim(2) != 3)
    throw DimensionError("grid_sample: theta must be [N,2,3], got " + shape_str(theta.shape()));
  if (out_h == 0 || out_w == 0) throw DimensionError("grid_sample: output extent must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t P = out_h * out_w;

  // Per output location: source pixel coordinates and the normalized output point.
  struct Sample {
    double px, py, u, v;
  };
  std::vector<Sample> samples(N * P);
  auto th = theta.values();
  for (std::size_t n = 0; n < N; ++n) {
    const double* t = th.data() + 6 * n;
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double u = (2.0 * ox + 1.0) / out_w - 1.0;
        const double v = (2.0 * oy + 1.0) / out_h - 1.0;
        const double xs = t[0] * u + t[1] * v + t[2];
        const double ys = t[3] * u + t[4] * v + t[5];
        samples[n * P + oy * out_w + ox] = {snap(((xs + 1.0) * W - 1.0) / 2.0),
                                            snap(((ys + 1.0) * H - 1.0) / 2.0), u, v};
      }
  }

  auto pixel = [H, W](const double* plane, long y, long x) {
    return (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) ? 0.0
                                                                                      : plane[y * W + x];
  };

  auto in = input.values();
  std::vector<double> out(N * C * P);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < P; ++p) {
      const Sample& s = samples[n * P + p];
      const double fx = std::floor(s.px), fy = std::floor(s.py);
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const double ax = s.px - fx, ay = s.py - fy;
      for (std::size_t c = 0; c < C; ++c) {
        const double* plane = in.data() + (n * C + c) * H * W;
        out[(n * C + c) * P + p] = (1 - ay) * ((1 - ax) * pixel(plane, y0, x0) + ax * pixel(plane, y0, x0 + 1)) +
                                   ay * ((1 - ax) * pixel(plane, y0 + 1, x0) + ax * pixel(plane, y0 + 1, x0 + 1));
      }
    }

  return make_result(
      {N, C, out_h, out_w}, std::move(out), "grid_sample_bilinear", {input, theta},
      [N, C, H, W, P, samples = std::move(samples), pixel](detail::TensorImpl& o) {
        double* gin = grad_target(o.inputs[0]);
        double* gth = grad_target(o.inputs[1]);
        auto in = o.inputs[0].values();
        auto th = o.inputs[1].values();
        auto scatter = [H, W](double* plane, long y, long x, double v) {
          if (y >= 0 && x >= 0 && y < static_cast<long>(H) && x < static_cast<long>(W)) plane[y * W + x] += v;
        };
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t p = 0; p < P; ++p) {
            const Sample& s = samples[n * P + p];
            const double fx = std::floor(s.px), fy = std::floor(s.py);
            const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
            const double ax = s.px - fx, ay = s.py - fy;
            double dpx = 0.0, dpy = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double g = o.grad[(n * C + c) * P + p];
              if (g == 0.0) continue;
              if (gin) {
                double* plane = gin + (n * C + c) * H * W;
                scatter(plane, y0, x0, g * (1 - ay) * (1 - ax));
                scatter(plane, y0, x0 + 1, g * (1 - ay) * ax);
                scatter(plane, y0 + 1, x0, g * ay * (1 - ax));
                scatter(plane, y0 + 1, x0 + 1, g * ay * ax);
              }
              if (gth) {
                const double* plane = in.data() + (n * C + c) * H * W;
                const double v00 = pixel(plane, y0, x0), v01 = pixel(plane, y0, x0 + 1);
                const double v10 = pixel(plane, y0 + 1, x0), v11 = pixel(plane, y0 + 1, x0 + 1);
                dpx += g * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
                dpy += g * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
              }
            }
            if (gth) {
              // px = ((xs+1)W-1)/2 so dpx/dxs = W/2.
              const double dxs = dpx * W / 2.0, dys = dpy * H / 2.0;
              double* t = gth + 6 * n;
              t[0] += dxs * s.u;
              t[1] += dxs * s.v;
              t[2] += dxs;
              t[3] += dys * s.u;
              t[4] += dys * s.v;
              t[5] += dys;
            }
          }
        (void)th;
      });
}

Tensor grid_sample_bilinear(const Tensor& input, const AffineParams& theta, std::size_t out_h,
                            std::size_t out_w) {
  if (input.rank() != 3) throw DimensionError("grid_sample: single-image form expects [C,H,W]");
  const Tensor batch = as_batch(input, "grid_sample");
  const Tensor th = affine_tensor(std::span<const AffineParams>(&theta, 1));
  return restore_rank(grid_sample_bilinear(batch, th, out_h, out_w), input);
}

Tensor replicate_spatial(const Tensor& v, std::size_t grid) {
  if (grid == 0) throw DimensionError("replicate_spatial: grid must be >= 1");
  const bool single = v.rank() == 1;
  if (!single && v.rank() != 2) throw DimensionError("replicate_spatial: expected [T] or [N,T]");
  const std::size_t N = single ? 1 : v.dim(0), T = single ? v.dim(0) : v.dim(1);
  const std::size_t P = grid * grid;
  auto vs = v.values();
  std::vector<double> out(N * T * P);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) std::fill_n(out.begin() + (n * T + t) * P, P, vs[n * T + t]);
  Shape shape = single ? Shape{T, grid, grid} : Shape{N, T, grid, grid};
  return make_result(std::move(shape), std::move(out), "replicate_spatial", {v},
                     [N, T, P](detail::TensorImpl& o) {
                       double* g = grad_target(o.inputs[0]);
                       if (!g) return;
                       for (std::size_t k = 0; k < N * T; ++k) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < P; ++i) acc += o.grad[k * P + i];
                         g[k] += acc;
                       }
                     });
}

Tensor bbox_mask(std::span<const BBox> boxes, std::size_t grid) {
  if (boxes.empty()) throw UsageError("bbox_mask: no boxes");
  Tensor mask({boxes.size(), 1, grid, grid});
  auto m = mask.values_mut();
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    boxes[n].validate();
    for (std::size_t r = 0; r < grid; ++r)
      for (std::size_t c = 0; c < grid; ++c)
        m[(n * grid + r) * grid + c] = boxes[n].contains_center(r, c, grid) ? 1.0 : 0.0;
  }
  return mask;
}

Tensor mask_outside_bbox(const Tensor& x, std::span<const BBox> boxes) {
  const Tensor xb = as_batch(x, "mask_outside_bbox");
  require_box_count(xb, boxes, "mask_outside_bbox");
  if (xb.dim(2) != xb.dim(3)) throw DimensionError("mask_outside_bbox: expected square maps");
  const Tensor mask = replicate_channels(bbox_mask(boxes, xb.dim(2)), xb.dim(1));
  return restore_rank(mul(xb, mask), x);
}

Tensor mask_outside_bbox(const Tensor& x, const BBox& box) {
  return mask_outside_bbox(x, std::span<const BBox>(&box, 1));
}

Tensor warp_into_bbox(const Tensor& x, std::span<const BBox> boxes) {
  const Tensor xb = as_batch(x, "warp_into_bbox");
  require_box_count(xb, boxes, "warp_into_bbox");
  std::vector<AffineParams> affines;
  for (const BBox& b : boxes) affines.push_back(bbox_to_affine_into(b));
  const Tensor warped = grid_sample_bilinear(xb, affine_tensor(affines), xb.dim(2), xb.dim(3));
  return restore_rank(mask_outside_bbox(warped, boxes), x);
}

Tensor crop_to_bbox(const Tensor& x, std::span<const BBox> boxes, std::size_t out_grid) {
  const Tensor xb = as_batch(x, "crop_to_bbox");
  require_box_count(xb, boxes, "crop_to_bbox");
  std::vector<AffineParams> affines;
  for (const BBox& b : boxes) affines.push_back(bbox_to_affine_crop(b));
  return restore_rank(grid_sample_bilinear(xb, affine_tensor(affines), out_grid, out_grid), x);
}

Tensor crop_to_bbox(const Tensor& x, const BBox& box, std::size_t out_grid) {
  return crop_to_bbox(x, std::span<const BBox>(&box, 1), out_grid);
}

Tensor average_maps(std::span<const Tensor> maps) {
  if (maps.empty()) throw UsageError("average_maps: empty list");
  Tensor acc = maps[0];
  for (std::size_t i = 1; i < maps.size(); ++i) acc = add(acc, maps[i]);
  return scale(acc, 1.0 / static_cast<double>(maps.size()));
}

}  // namespace gawwn
