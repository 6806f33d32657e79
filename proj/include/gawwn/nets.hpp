#pragma once

// The four image networks: box- and keypoint-conditional generators and
// discriminators, each split into a local (object-region) and a global
// pathway.

#include <span>
#include <vector>

#include <json.hpp>

#include "gawwn/keypoints.hpp"
#include "gawwn/spatial.hpp"

namespace gawwn {

struct NetConfig {
  std::size_t z_dim = 16;       // Z
  std::size_t text_dim = 64;    // T
  std::size_t grid = 8;         // M
  std::size_t parts = 5;        // K
  std::size_t hidden = 32;      // H
  std::size_t image_size = 32;  // S
  // Channel schedule.
  std::size_t path_base = 64;  // widest generator path layer is path_base * 2^(stages-1)
  std::size_t post_base = 32;  // last hidden layer after the merge
  std::size_t disc_base = 16;  // first discriminator conv
  std::size_t disc_vec = 64;   // discriminator pathway vector width
  std::size_t kp_vec = 32;     // keypoint encoder output
  std::size_t loc_vec = 64;    // conv-pooled box encoding

  static NetConfig desk() { return {}; }
  static NetConfig full();

  /// Throws DimensionError unless M is a power of two >= 8 and S = M * 2^j with j >= 1.
  void validate() const;
  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
};

enum class Act { none, relu, lrelu, tanh };

/// conv or deconv, then batch norm or bias, then activation.
struct Block {
  Tensor weight;
  bool transposed = false;
  std::size_t stride = 1, pad = 0;
  bool has_bn = false;
  BatchNorm bn;
  Tensor bias;
  Act act = Act::none;

  Tensor operator()(const Tensor& x, bool training) const;
};

/// Image plus the probe points used by the masking invariants.
struct GeneratorOutput {
  Tensor image;        // [N,3,S,S] in [-1,1]
  Tensor local_probe;  // local pathway activations right after masking/gating, [N,H,M,M]
  Tensor mask;         // the 0/1 mask that was applied, [N,1,M,M]
};

class BBoxGenerator {
 public:
  BBoxGenerator(ParamStore& store, const NetConfig& config, Rng& rng);
  GeneratorOutput operator()(const Tensor& z, const Tensor& t, std::span<const BBox> boxes, bool training) const;
  const NetConfig& config() const { return config_; }

 private:
  NetConfig config_;
  std::vector<Block> box_encoder_, global_, local_, post_;
};

class BBoxDiscriminator {
 public:
  BBoxDiscriminator(ParamStore& store, const NetConfig& config, Rng& rng);
  /// Logits [N,1].
  Tensor operator()(const Tensor& images, const Tensor& t, std::span<const BBox> boxes, bool training) const;

 private:
  NetConfig config_;
  std::vector<Block> global_, local_down_, local_after_;
  Linear text_proj_, out_;
};

class KeypointImageGenerator {
 public:
  KeypointImageGenerator(ParamStore& store, const NetConfig& config, Rng& rng);
  /// grid is the [N,K,M,M] keypoint tensor.
  GeneratorOutput operator()(const Tensor& z, const Tensor& t, const Tensor& grid, bool training) const;
  const NetConfig& config() const { return config_; }

 private:
  NetConfig config_;
  std::vector<Block> kp_encoder_, global_, local_, post_;
};

class KeypointImageDiscriminator {
 public:
  KeypointImageDiscriminator(ParamStore& store, const NetConfig& config, Rng& rng);
  Tensor operator()(const Tensor& images, const Tensor& t, const Tensor& grid, bool training) const;

 private:
  NetConfig config_;
  std::vector<Block> global_, local_down_, local_after_;
  Linear text_proj_, out_;
};

/// 1 / (1 + exp(-logit)) of a [N,1] logit tensor, as plain numbers.
std::vector<double> scores_from_logits(const Tensor& logits);

}  // namespace gawwn
