#pragma once

// Part keypoints: grid encodings used by the image networks, and the
// switch-gated keypoint generator / discriminator pair used to complete a
// pose from any observed subset of parts.

#include <span>
#include <vector>

#include "gawwn/layers.hpp"

namespace gawwn {

struct Keypoint {
  double x = 0, y = 0;
  double v = 0;  // 1 visible, 0 absent (then x = y = 0)
  bool operator==(const Keypoint&) const = default;
};

using KeypointSet = std::vector<Keypoint>;
using SwitchVector = std::vector<int>;

/// Throws InputError unless coordinates are in [0,1], v is 0 or 1, and absent parts sit at the origin.
void validate_keypoints(const KeypointSet& kp);

/// Grid cell of a normalized coordinate: floor(c * M), clamped to M-1.
std::size_t grid_cell(double coord, std::size_t grid);

/// [K,M,M] one-hot per visible part.
Tensor keypoints_to_grid(const KeypointSet& kp, std::size_t grid);
/// [N,K,M,M].
Tensor keypoints_to_grid(std::span<const KeypointSet> batch, std::size_t grid);

/// [K,M,M] -> [M,M] or [N,K,M,M] -> [N,1,M,M]; 1 where any channel is nonzero.
Tensor grid_to_binary_mask(const Tensor& grid);

/// Independent Bernoulli(p) bit per part, forced to 0 for absent parts.
SwitchVector sample_switches(const KeypointSet& kp, double p, Rng& rng);

/// [N, 3K] rows of (x, y, v) triples.
Tensor keypoints_to_tensor(std::span<const KeypointSet> batch);
/// [N, 3K] per-coordinate copy of each part's switch bit.
Tensor switches_to_tensor(std::span<const SwitchVector> switches);

/// Reads one row of a [N,3K] generator output as a keypoint set. Visibility
/// is thresholded at 0.5; absent parts are moved to the origin. Rows whose
/// switch is on are copied verbatim from `observed`, so echoed parts are
/// bitwise identical to the input.
KeypointSet keypoints_from_row(const Tensor& rows, std::size_t row, const KeypointSet& observed,
                               const SwitchVector& switches);

struct KeypointNetConfig {
  std::size_t z_dim = 16;
  std::size_t text_dim = 64;
  std::size_t num_parts = 5;
  std::size_t hidden = 256;
};

/// G_k(z, t, k, s) = s*k + (1-s)*sigmoid(f(z, t, s*k)) with f a 3-layer MLP.
/// f only ever sees the observed coordinates.
class KeypointGenerator {
 public:
  KeypointGenerator(ParamStore& store, const KeypointNetConfig& config, Rng& rng);

  /// z [N,Z], t [N,T], kp [N,3K], s [N,3K] -> [N,3K] in [0,1].
  Tensor operator()(const Tensor& z, const Tensor& t, const Tensor& kp, const Tensor& s) const;

  const KeypointNetConfig& config() const { return config_; }

 private:
  KeypointNetConfig config_;
  Linear l1_, l2_, l3_;
};

/// D_k: 3-layer MLP over concat(flattened keypoints, t); returns logits [N,1].
class KeypointDiscriminator {
 public:
  KeypointDiscriminator(ParamStore& store, const KeypointNetConfig& config, Rng& rng);
  Tensor operator()(const Tensor& kp, const Tensor& t) const;

 private:
  KeypointNetConfig config_;
  Linear l1_, l2_, l3_;
};

}  // namespace gawwn
