#pragma once

// Model bundles: the parameter stores and networks of each trainable pair,
// plus conversion to and from checkpoints.

#include <memory>
#include <string>

#include "gawwn/checkpoint.hpp"
#include "gawwn/nets.hpp"
#include "gawwn/text_embedding.hpp"

namespace gawwn {

enum class ModelKind { bbox, keypoint, keypoint_completion, joint_embedding };

std::string to_string(ModelKind kind);
/// Accepts "bbox", "keypoint", "keypoint-completion", "joint-embedding".
ModelKind parse_model_kind(const std::string& name);

struct TextModel {
  TextModel(const TextEncoderConfig& config, std::size_t image_size, Rng& rng)
      : text_config(config), image_size(image_size), joint(config, image_size, rng) {}
  TextEncoderConfig text_config;
  std::size_t image_size;
  JointEmbeddingModel joint;

  /// Frozen-encoder embeddings [B,T] without recording a graph.
  Tensor embed(std::span<const std::string> captions) const;
};

struct BBoxGan {
  BBoxGan(const NetConfig& c, Rng& rng) : config(c), gen_store("gen_bbox"), disc_store("disc_bbox"),
                                          G(gen_store, c, rng), D(disc_store, c, rng) {}
  NetConfig config;
  ParamStore gen_store, disc_store;
  BBoxGenerator G;
  BBoxDiscriminator D;
};

struct KeypointGan {
  KeypointGan(const NetConfig& c, Rng& rng) : config(c), gen_store("gen_kp"), disc_store("disc_kp"),
                                              G(gen_store, c, rng), D(disc_store, c, rng) {}
  NetConfig config;
  ParamStore gen_store, disc_store;
  KeypointImageGenerator G;
  KeypointImageDiscriminator D;
};

struct KeypointCompletion {
  KeypointCompletion(const KeypointNetConfig& c, Rng& rng) : config(c), gen_store("gk"), disc_store("dk"),
                                                             G(gen_store, c, rng), D(disc_store, c, rng) {}
  KeypointNetConfig config;
  ParamStore gen_store, disc_store;
  KeypointGenerator G;
  KeypointDiscriminator D;
};

nlohmann::json text_config_json(const TextEncoderConfig& c);
TextEncoderConfig text_config_from_json(const nlohmann::json& j);

/// Every model checkpoint carries the text encoder it was trained with; the
/// meta block records "model", "step", "config_hash", "net", "text" and "manifest".
std::unique_ptr<TextModel> load_text_model(const Checkpoint& ck);
std::unique_ptr<BBoxGan> load_bbox_gan(const Checkpoint& ck);
std::unique_ptr<KeypointGan> load_keypoint_gan(const Checkpoint& ck);
std::unique_ptr<KeypointCompletion> load_keypoint_completion(const Checkpoint& ck);

/// Kind recorded in a checkpoint's metadata.
ModelKind checkpoint_kind(const Checkpoint& ck);

}  // namespace gawwn
