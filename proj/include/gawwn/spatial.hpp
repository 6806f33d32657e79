#pragma once

// Spatial-transformer machinery for the bounding-box pathways.
//
// Boxes live in normalized [0,1] image coordinates with a top-left origin.
// Sampling happens in [-1,1] normalized space with pixel centers at
// (2i+1)/extent - 1; the two conventions meet only in the bbox_to_affine_*
// functions.

#include <array>
#include <span>
#include <vector>

#include "gawwn/ops.hpp"

namespace gawwn {

struct BBox {
  double x0 = 0, y0 = 0, w = 1, h = 1;

  /// Throws GeometryError for non-positive extents or a box leaving [0,1]^2.
  void validate() const;
  // Pixel i of an extent-M grid is inside when its center (i+0.5)/M lies in [x0, x0+w].
  bool contains_center(std::size_t row, std::size_t col, std::size_t grid) const;
  double center_x() const { return x0 + w / 2; }
  double center_y() const { return y0 + h / 2; }
};

/// 2x3 row-major matrix mapping output sampling coordinates to input coordinates.
struct AffineParams {
  std::array<double, 6> theta{1, 0, 0, 0, 1, 0};
};

/// Affine that paints a full source into the box region of the output.
AffineParams bbox_to_affine_into(const BBox& box);
/// Inverse map: the box region of the source fills the whole output.
AffineParams bbox_to_affine_crop(const BBox& box);

/// Stacks affines into a constant [N,2,3] tensor.
Tensor affine_tensor(std::span<const AffineParams> affines);

/// Bilinear sampling with zero padding. input [N,C,H,W], theta [N,2,3]
/// -> [N,C,out_h,out_w]; differentiable in both input and theta.
Tensor grid_sample_bilinear(const Tensor& input, const Tensor& theta, std::size_t out_h,
                            std::size_t out_w);
/// Single-image form: input [C,H,W] -> [C,out_h,out_w].
Tensor grid_sample_bilinear(const Tensor& input, const AffineParams& theta, std::size_t out_h,
                            std::size_t out_w);

/// [N,T] -> [N,T,M,M] (or [T] -> [T,M,M]); every location holds a copy of the vector.
Tensor replicate_spatial(const Tensor& v, std::size_t grid);

/// Constant [N,1,M,M] 0/1 membership mask of pixel centers.
Tensor bbox_mask(std::span<const BBox> boxes, std::size_t grid);

/// Zeroes every entry whose pixel center lies outside its sample's box.
/// Accepts [N,C,M,M] with one box per sample, or [C,M,M] with a single box.
Tensor mask_outside_bbox(const Tensor& x, std::span<const BBox> boxes);
Tensor mask_outside_bbox(const Tensor& x, const BBox& box);

/// Warps each sample into its box at the same resolution, then masks so that
/// nothing outside the box is written.
Tensor warp_into_bbox(const Tensor& x, std::span<const BBox> boxes);

/// Resamples each sample's box region to out_grid x out_grid.
Tensor crop_to_bbox(const Tensor& x, std::span<const BBox> boxes, std::size_t out_grid);
Tensor crop_to_bbox(const Tensor& x, const BBox& box, std::size_t out_grid);

/// Elementwise mean of equally shaped maps (several localized captions).
Tensor average_maps(std::span<const Tensor> maps);

}  // namespace gawwn
