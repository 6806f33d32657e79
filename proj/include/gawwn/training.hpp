#pragma once

// Adversarial training for the three GAN pairs, pre-training of the joint
// text/image embedding, batch assembly and metrics.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gawwn/adam.hpp"
#include "gawwn/models.hpp"
#include "gawwn/toy_data.hpp"

namespace gawwn {

struct TrainConfig {
  ModelKind kind = ModelKind::keypoint;
  std::size_t batch_size = 16;
  double learning_rate = 0;  // 0 picks 2e-4 for the GANs and 1e-3 for the joint embedding
  double beta1 = 0.5, beta2 = 0.999;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  double switch_p = 0.1;
  std::string data_dir;  // empty: generate toy_records toy scenes in memory
  std::size_t toy_records = 2000;
  std::uint64_t data_seed = 1;
  std::string checkpoint_path;  // empty: keep the checkpoint in memory only
  std::string text_checkpoint;  // frozen caption encoder for the GAN kinds
  std::string metrics_path;     // newline-delimited JSON, one record per step
  bool zero_keypoints = false;  // ablation: keypoint grids are all zero during training
  std::size_t checkpoint_every = 500;
  bool worker_thread = false;  // assemble batches on a producer thread
  NetConfig net;
  TextEncoderConfig text;
  std::size_t kp_hidden = 256;

  double effective_learning_rate() const;
  /// Throws UsageError for batch < 2, lr <= 0 (after defaulting), p outside [0,1].
  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainMetrics {
  std::size_t step = 0;
  double d_loss = 0, g_loss = 0;
  double d_acc_real = 0, d_acc_fake = 0;
  double loss = 0;  // joint-embedding runs only
  double wall_ms = 0;
  bool embedding = false;

  nlohmann::json to_json() const;
};

/// Immutable once built. Conditioning fields are the ones a mismatched batch permutes.
struct Batch {
  std::vector<std::size_t> indices;
  std::vector<int> labels;
  Tensor images;  // [N,3,S,S]
  Tensor text;    // [N,T], mean of 4 sampled caption embeddings per image
  std::vector<BBox> boxes;
  std::vector<KeypointSet> keypoints;
  Tensor grid;      // [N,K,M,M]
  Tensor kp;        // [N,3K]
  Tensor switches;  // [N,3K]

  std::size_t size() const { return indices.size(); }
};

/// Same images, conditioning taken from row perm[i].
Batch mismatch(const Batch& batch, std::span<const std::size_t> perm);

/// Precomputes caption embeddings and assembles random batches from a dataset.
class BatchSource {
 public:
  BatchSource(const Dataset& data, const TextModel* text, const TrainConfig& config);
  Batch next(Rng& rng) const;
  /// Batch built from explicit records (evaluation); caption choice still uses rng.
  Batch make(std::span<const std::size_t> indices, Rng& rng) const;
  /// [n_captions, T] embeddings of one record.
  const Tensor& caption_embeddings(std::size_t record) const { return caption_embeddings_[record]; }
  const Dataset& data() const { return data_; }

 private:
  const Dataset& data_;
  TrainConfig config_;
  std::vector<Tensor> caption_embeddings_;
};

/// The loss terms of one adversarial update.
struct DiscriminatorLoss {
  Tensor real_fake;  // -log D(x,c) - log(1 - D(G(z,c),c))
  Tensor total;      // real_fake + 0.5 * (-log(1 - D(x, c_mismatched)))
};
DiscriminatorLoss discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits,
                                     const Tensor& mismatch_logits);
/// -log D(G(z,c),c): the non-saturating generator objective.
Tensor generator_loss(const Tensor& fake_logits);

/// Uniform view of a generator/discriminator pair for the training loop.
class GanPair {
 public:
  virtual ~GanPair() = default;
  virtual Tensor real(const Batch& b) const = 0;
  virtual Tensor generate(const Batch& b, const Tensor& z, bool training) const = 0;
  virtual Tensor discriminate(const Tensor& sample, const Batch& cond, bool training) const = 0;
  virtual ParamStore& gen_store() = 0;
  virtual ParamStore& disc_store() = 0;
  virtual std::size_t z_dim() const = 0;
};

std::unique_ptr<GanPair> make_gan_pair(BBoxGan& model);
std::unique_ptr<GanPair> make_gan_pair(KeypointGan& model);
std::unique_ptr<GanPair> make_gan_pair(KeypointCompletion& model);

/// One discriminator update (real / fake / mismatched) followed by one
/// generator update. The two optimizers must hold disjoint parameters.
TrainMetrics gan_step(GanPair& pair, AdamState& gen_opt, AdamState& disc_opt, const Batch& batch, Rng& rng);

/// Update of both encoders on one batch (4 sampled captions per image); returns the loss.
double joint_embedding_step(TextModel& model, AdamState& opt, const Dataset& data, const Batch& batch, Rng& rng);

/// Held-out top-1 accuracy of the two compatibility classifiers: images
/// against per-class caption pools (f_v) and captions against per-class
/// image pools (f_t).
struct EmbeddingAccuracy {
  double image_top1 = 0;
  double text_top1 = 0;
};
EmbeddingAccuracy evaluate_joint_embedding(const TextModel& model, const Dataset& data);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainMetrics> metrics;
};

using StepCallback = std::function<void(const TrainMetrics&)>;

/// Runs config.steps updates on the configured dataset.
TrainResult train(const TrainConfig& config, const StepCallback& on_step = {});
/// Same on an already loaded dataset.
TrainResult train(const TrainConfig& config, const Dataset& data, const StepCallback& on_step = {});

/// Loads a dataset directory or generates the in-memory toy set.
Dataset load_training_data(const TrainConfig& config);

}  // namespace gawwn
