#include "gawwn/models.hpp"

namespace gawwn {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::bbox: return "bbox";
    case ModelKind::keypoint: return "keypoint";
    case ModelKind::keypoint_completion: return "keypoint-completion";
    case ModelKind::joint_embedding: return "joint-embedding";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  for (ModelKind k : {ModelKind::bbox, ModelKind::keypoint, ModelKind::keypoint_completion, ModelKind::joint_embedding})
    if (to_string(k) == name) return k;
  throw UsageError("unknown model kind '" + name + "'");
}

Tensor TextModel::embed(std::span<const std::string> captions) const {
  NoGradGuard guard;
  return joint.text.encode(captions);
}

nlohmann::json text_config_json(const TextEncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},         {"conv1_filters", c.conv1_filters}, {"conv1_width", c.conv1_width},
          {"conv2_filters", c.conv2_filters}, {"conv2_width", c.conv2_width},     {"pool", c.pool},
          {"gru_hidden", c.gru_hidden}};
}

TextEncoderConfig text_config_from_json(const nlohmann::json& j) {
  TextEncoderConfig c;
  auto read = [&](const char* key, std::size_t& field) {
    if (j.contains(key)) field = j.at(key).get<std::size_t>();
  };
  read("embed_dim", c.embed_dim);
  read("conv1_filters", c.conv1_filters);
  read("conv1_width", c.conv1_width);
  read("conv2_filters", c.conv2_filters);
  read("conv2_width", c.conv2_width);
  read("pool", c.pool);
  read("gru_hidden", c.gru_hidden);
  return c;
}

namespace {

const nlohmann::json& meta_field(const Checkpoint& ck, const char* key) {
  if (!ck.meta.contains(key)) throw FormatError(std::string("checkpoint metadata lacks '") + key + "'");
  return ck.meta.at(key);
}

void expect_kind(const Checkpoint& ck, ModelKind kind) {
  if (checkpoint_kind(ck) != kind)
    throw UsageError("checkpoint holds a " + to_string(checkpoint_kind(ck)) + " model, not " + to_string(kind));
}

}  // namespace

ModelKind checkpoint_kind(const Checkpoint& ck) {
  try {
    return parse_model_kind(meta_field(ck, "model").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

std::unique_ptr<TextModel> load_text_model(const Checkpoint& ck) {
  try {
    const auto text = text_config_from_json(meta_field(ck, "text"));
    const auto size = meta_field(ck, "image_size").get<std::size_t>();
    Rng rng(0);
    auto model = std::make_unique<TextModel>(text, size, rng);
    model->joint.store.load(ck);
    model->joint.store.set_trainable(false);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

std::unique_ptr<BBoxGan> load_bbox_gan(const Checkpoint& ck) {
  expect_kind(ck, ModelKind::bbox);
  Rng rng(0);
  auto model = std::make_unique<BBoxGan>(NetConfig::from_json(meta_field(ck, "net")), rng);
  model->gen_store.load(ck);
  model->disc_store.load(ck);
  model->gen_store.set_trainable(false);
  model->disc_store.set_trainable(false);
  return model;
}

std::unique_ptr<KeypointGan> load_keypoint_gan(const Checkpoint& ck) {
  expect_kind(ck, ModelKind::keypoint);
  Rng rng(0);
  auto model = std::make_unique<KeypointGan>(NetConfig::from_json(meta_field(ck, "net")), rng);
  model->gen_store.load(ck);
  model->disc_store.load(ck);
  model->gen_store.set_trainable(false);
  model->disc_store.set_trainable(false);
  return model;
}

std::unique_ptr<KeypointCompletion> load_keypoint_completion(const Checkpoint& ck) {
  expect_kind(ck, ModelKind::keypoint_completion);
  const NetConfig net = NetConfig::from_json(meta_field(ck, "net"));
  KeypointNetConfig c;
  c.z_dim = net.z_dim;
  c.text_dim = net.text_dim;
  c.num_parts = net.parts;
  if (ck.meta.contains("kp_hidden")) c.hidden = ck.meta.at("kp_hidden").get<std::size_t>();
  Rng rng(0);
  auto model = std::make_unique<KeypointCompletion>(c, rng);
  model->gen_store.load(ck);
  model->disc_store.load(ck);
  model->gen_store.set_trainable(false);
  model->disc_store.set_trainable(false);
  return model;
}

}  // namespace gawwn
