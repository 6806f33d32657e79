#include "gawwn/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gawwn {

void validate_keypoints(const KeypointSet& kp) {
  for (std::size_t i = 0; i < kp.size(); ++i) {
    const Keypoint& k = kp[i];
    const std::string where = "keypoint " + std::to_string(i);
    if (!(k.x >= 0 && k.x <= 1 && k.y >= 0 && k.y <= 1)) throw InputError(where + ": coordinates outside [0,1]");
    if (k.v != 0 && k.v != 1) throw InputError(where + ": visibility must be 0 or 1");
    if (k.v == 0 && (k.x != 0 || k.y != 0)) throw InputError(where + ": absent part must sit at (0,0)");
  }
}

std::size_t grid_cell(double coord, std::size_t grid) {
  const double cell = std::floor(coord * static_cast<double>(grid));
  if (cell <= 0) return 0;
  return std::min(static_cast<std::size_t>(cell), grid - 1);
}

Tensor keypoints_to_grid(const KeypointSet& kp, std::size_t grid) {
  const Tensor batch = keypoints_to_grid(std::span<const KeypointSet>(&kp, 1), grid);
  return reshape(batch, {kp.size(), grid, grid});
}

Tensor keypoints_to_grid(std::span<const KeypointSet> batch, std::size_t grid) {
  if (batch.empty() || grid == 0) throw DimensionError("keypoints_to_grid: empty batch or grid");
  const std::size_t K = batch[0].size();
  Tensor out({batch.size(), K, grid, grid});
  auto o = out.values_mut();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (batch[n].size() != K) throw DimensionError("keypoints_to_grid: ragged part counts");
    for (std::size_t k = 0; k < K; ++k) {
      const Keypoint& p = batch[n][k];
      if (p.v < 0.5) continue;
      o[((n * K + k) * grid + grid_cell(p.y, grid)) * grid + grid_cell(p.x, grid)] = 1.0;
    }
  }
  return out;
}

Tensor grid_to_binary_mask(const Tensor& grid) {
  const bool single = grid.rank() == 3;
  if (!single && grid.rank() != 4) throw DimensionError("grid_to_binary_mask: expected [K,M,M] or [N,K,M,M]");
  const std::size_t N = single ? 1 : grid.dim(0), K = grid.dim(single ? 0 : 1);
  const std::size_t P = grid.dim(grid.rank() - 1) * grid.dim(grid.rank() - 2);
  Tensor mask({N, 1, grid.dim(grid.rank() - 2), grid.dim(grid.rank() - 1)});
  auto m = mask.values_mut();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < P; ++p)
        if (grid.at((n * K + k) * P + p) != 0.0) m[n * P + p] = 1.0;
  if (single) return reshape(mask, {grid.dim(1), grid.dim(2)});
  return mask;
}

SwitchVector sample_switches(const KeypointSet& kp, double p, Rng& rng) {
  if (!(p >= 0 && p <= 1)) throw UsageError("switch probability must be in [0,1]");
  SwitchVector s(kp.size(), 0);
  for (std::size_t i = 0; i < kp.size(); ++i) {
    const bool on = rng.bernoulli(p);
    s[i] = (on && kp[i].v >= 0.5) ? 1 : 0;
  }
  return s;
}

Tensor keypoints_to_tensor(std::span<const KeypointSet> batch) {
  if (batch.empty()) throw DimensionError("keypoints_to_tensor: empty batch");
  const std::size_t K = batch[0].size();
  Tensor out({batch.size(), 3 * K});
  auto o = out.values_mut();
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (batch[n].size() != K) throw DimensionError("keypoints_to_tensor: ragged part counts");
    for (std::size_t k = 0; k < K; ++k) {
      o[n * 3 * K + 3 * k] = batch[n][k].x;
      o[n * 3 * K + 3 * k + 1] = batch[n][k].y;
      o[n * 3 * K + 3 * k + 2] = batch[n][k].v;
    }
  }
  return out;
}

Tensor switches_to_tensor(std::span<const SwitchVector> switches) {
  if (switches.empty()) throw DimensionError("switches_to_tensor: empty batch");
  const std::size_t K = switches[0].size();
  Tensor out({switches.size(), 3 * K});
  auto o = out.values_mut();
  for (std::size_t n = 0; n < switches.size(); ++n) {
    if (switches[n].size() != K) throw DimensionError("switches_to_tensor: ragged part counts");
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < 3; ++j) o[n * 3 * K + 3 * k + j] = switches[n][k] ? 1.0 : 0.0;
  }
  return out;
}

KeypointSet keypoints_from_row(const Tensor& rows, std::size_t row, const KeypointSet& observed,
                               const SwitchVector& switches) {
  const std::size_t K = observed.size();
  if (rows.rank() != 2 || rows.dim(1) != 3 * K || switches.size() != K)
    throw DimensionError("keypoints_from_row: part count mismatch");
  KeypointSet out(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (switches[k]) {
      out[k] = observed[k];
      continue;
    }
    const double* r = rows.values().data() + row * 3 * K + 3 * k;
    if (r[2] >= 0.5)
      out[k] = {std::clamp(r[0], 0.0, 1.0), std::clamp(r[1], 0.0, 1.0), 1.0};
  }
  return out;
}

KeypointGenerator::KeypointGenerator(ParamStore& store, const KeypointNetConfig& c, Rng& rng) : config_(c) {
  const std::size_t in = c.z_dim + c.text_dim + 3 * c.num_parts;
  l1_ = make_linear(store, "fc1", in, c.hidden, rng);
  l2_ = make_linear(store, "fc2", c.hidden, c.hidden, rng);
  l3_ = make_linear(store, "fc3", c.hidden, 3 * c.num_parts, rng, 0.02);
}

Tensor KeypointGenerator::operator()(const Tensor& z, const Tensor& t, const Tensor& kp, const Tensor& s) const {
  const std::size_t width = 3 * config_.num_parts;
  if (z.rank() != 2 || z.dim(1) != config_.z_dim) throw DimensionError("G_k: z must be [N," + std::to_string(config_.z_dim) + "]");
  if (t.rank() != 2 || t.dim(1) != config_.text_dim) throw DimensionError("G_k: t width mismatch");
  if (kp.rank() != 2 || kp.dim(1) != width || s.shape() != kp.shape()) throw DimensionError("G_k: keypoint width mismatch");
  if (t.dim(0) != z.dim(0) || kp.dim(0) != z.dim(0)) throw DimensionError("G_k: batch mismatch");
  const Tensor observed = mul(s, kp);
  Tensor h = relu(l1_(concat({z, t, observed}, 1)));
  h = relu(l2_(h));
  const Tensor completed = sigmoid(l3_(h));
  return add(observed, mul(one_minus(s), completed));
}

KeypointDiscriminator::KeypointDiscriminator(ParamStore& store, const KeypointNetConfig& c, Rng& rng)
    : config_(c) {
  l1_ = make_linear(store, "fc1", 3 * c.num_parts + c.text_dim, c.hidden, rng);
  l2_ = make_linear(store, "fc2", c.hidden, c.hidden, rng);
  l3_ = make_linear(store, "fc3", c.hidden, 1, rng, 0.02);
}

Tensor KeypointDiscriminator::operator()(const Tensor& kp, const Tensor& t) const {
  if (kp.rank() != 2 || kp.dim(1) != 3 * config_.num_parts) throw DimensionError("D_k: keypoint width mismatch");
  if (t.rank() != 2 || t.dim(1) != config_.text_dim || t.dim(0) != kp.dim(0)) throw DimensionError("D_k: text mismatch");
  Tensor h = leaky_relu(l1_(concat({kp, t}, 1)), 0.2);
  h = leaky_relu(l2_(h), 0.2);
  return l3_(h);
}

}  // namespace gawwn
