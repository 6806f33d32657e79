#include "gawwn/training.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "gawwn/image_io.hpp"

namespace gawwn {

namespace {

constexpr std::size_t kCaptionsPerEmbedding = 4;

Tensor permute_rows(const Tensor& x, std::span<const std::size_t> perm) {
  const std::size_t N = x.dim(0), row = x.numel() / N;
  Tensor out(x.shape());
  auto o = out.values_mut();
  auto v = x.values();
  for (std::size_t i = 0; i < N; ++i) std::copy_n(v.begin() + perm[i] * row, row, o.begin() + i * row);
  return out;
}

template <typename T>
std::vector<T> permute_vector(const std::vector<T>& v, std::span<const std::size_t> perm) {
  std::vector<T> out;
  for (std::size_t i : perm) out.push_back(v[i]);
  return out;
}

// Up to four distinct captions of one record.
std::vector<std::size_t> pick_captions(std::size_t available, Rng& rng) {
  auto order = rng.permutation(available);
  order.resize(std::min(available, kCaptionsPerEmbedding));
  return order;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL;
  x ^= x >> 31;
  x *= 0xd6e8feb86659fd93ULL;
  return x ^ (x >> 32);
}

double fraction(const Tensor& logits, bool positive) {
  std::size_t n = 0;
  for (double l : logits.values()) n += positive ? (l > 0) : (l < 0);
  return static_cast<double>(n) / static_cast<double>(logits.numel());
}

// Bounded single-producer queue handing finished batches to the training loop.
class BatchQueue {
 public:
  BatchQueue(const BatchSource& source, Rng rng, std::size_t total, std::size_t depth)
      : worker_([this, &source, rng, total, depth]() mutable {
          try {
            for (std::size_t i = 0; i < total; ++i) {
              Batch b = source.next(rng);
              std::unique_lock lock(mu_);
              cv_.wait(lock, [&] { return stop_ || queue_.size() < depth; });
              if (stop_) return;
              queue_.push_back(std::move(b));
              cv_.notify_all();
            }
          } catch (...) {
            std::lock_guard lock(mu_);
            error_ = std::current_exception();
            cv_.notify_all();
          }
        }) {}

  ~BatchQueue() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      cv_.notify_all();
    }
    worker_.join();
  }

  Batch pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;  // declared last: starts after the members it touches
};

template <typename Model>
class Pair : public GanPair {
 public:
  explicit Pair(Model& m) : m_(m) {}
  ParamStore& gen_store() override { return m_.gen_store; }
  ParamStore& disc_store() override { return m_.disc_store; }

 protected:
  Model& m_;
};

class BBoxPair final : public Pair<BBoxGan> {
 public:
  using Pair::Pair;
  Tensor real(const Batch& b) const override { return b.images; }
  Tensor generate(const Batch& b, const Tensor& z, bool training) const override {
    return m_.G(z, b.text, b.boxes, training).image;
  }
  Tensor discriminate(const Tensor& x, const Batch& c, bool training) const override {
    return m_.D(x, c.text, c.boxes, training);
  }
  std::size_t z_dim() const override { return m_.config.z_dim; }
};

class KeypointPair final : public Pair<KeypointGan> {
 public:
  using Pair::Pair;
  Tensor real(const Batch& b) const override { return b.images; }
  Tensor generate(const Batch& b, const Tensor& z, bool training) const override {
    return m_.G(z, b.text, b.grid, training).image;
  }
  Tensor discriminate(const Tensor& x, const Batch& c, bool training) const override {
    return m_.D(x, c.text, c.grid, training);
  }
  std::size_t z_dim() const override { return m_.config.z_dim; }
};

class CompletionPair final : public Pair<KeypointCompletion> {
 public:
  using Pair::Pair;
  Tensor real(const Batch& b) const override { return b.kp; }
  Tensor generate(const Batch& b, const Tensor& z, bool) const override {
    return m_.G(z, b.text, b.kp, b.switches);
  }
  Tensor discriminate(const Tensor& kp, const Batch& c, bool) const override { return m_.D(kp, c.text); }
  std::size_t z_dim() const override { return m_.config.z_dim; }
};

}  // namespace

double TrainConfig::effective_learning_rate() const {
  if (learning_rate > 0) return learning_rate;
  return kind == ModelKind::joint_embedding ? 1e-3 : 2e-4;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw UsageError("batch size must be at least 2");
  if (learning_rate < 0) throw UsageError("learning rate must be positive");
  if (!(switch_p >= 0 && switch_p <= 1)) throw UsageError("switch probability must be in [0,1]");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw UsageError("ADAM betas must be in [0,1)");
  if (data_dir.empty() && toy_records < 2) throw UsageError("toy dataset needs at least two records");
  net.validate();
  if (net.text_dim != text.embed_dim) throw UsageError("network text width must equal the encoder's");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"batch_size", batch_size},
          {"learning_rate", effective_learning_rate()},
          {"beta1", beta1},
          {"beta2", beta2},
          {"steps", steps},
          {"seed", seed},
          {"switch_p", switch_p},
          {"data_dir", data_dir},
          {"toy_records", toy_records},
          {"data_seed", data_seed},
          {"zero_keypoints", zero_keypoints},
          {"net", net.to_json()},
          {"text", text_config_json(text)},
          {"kp_hidden", kp_hidden}};
}

nlohmann::json TrainMetrics::to_json() const {
  if (embedding) return {{"step", step}, {"loss", loss}, {"wall_ms", wall_ms}};
  return {{"step", step},           {"d_loss", d_loss},         {"g_loss", g_loss},
          {"d_acc_real", d_acc_real}, {"d_acc_fake", d_acc_fake}, {"wall_ms", wall_ms}};
}

Batch mismatch(const Batch& b, std::span<const std::size_t> perm) {
  if (perm.size() != b.size()) throw DimensionError("mismatch: permutation length differs from batch");
  Batch m;
  m.indices = b.indices;
  m.labels = b.labels;
  m.images = b.images;
  m.text = permute_rows(b.text, perm);
  m.boxes = permute_vector(b.boxes, perm);
  m.keypoints = permute_vector(b.keypoints, perm);
  m.grid = permute_rows(b.grid, perm);
  m.kp = permute_rows(b.kp, perm);
  m.switches = permute_rows(b.switches, perm);
  return m;
}

BatchSource::BatchSource(const Dataset& data, const TextModel* text, const TrainConfig& config)
    : data_(data), config_(config) {
  if (data.records.size() < 2) throw UsageError("dataset needs at least two records");
  const std::size_t S = config.net.image_size;
  for (const auto& r : data.records) {
    if (r.image.dim(1) != S) throw DimensionError("dataset image size differs from the network's");
    if (r.keypoints.size() != config.net.parts) throw DimensionError("dataset part count differs from the network's");
  }
  if (!text) return;
  for (const auto& r : data.records) caption_embeddings_.push_back(text->embed(r.captions));
}

Batch BatchSource::next(Rng& rng) const {
  std::vector<std::size_t> idx(config_.batch_size);
  for (auto& i : idx) i = rng.index(data_.records.size());
  return make(idx, rng);
}

Batch BatchSource::make(std::span<const std::size_t> indices, Rng& rng) const {
  const std::size_t N = indices.size(), S = config_.net.image_size;
  const std::size_t T = config_.net.text_dim, P = 3 * S * S;
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.images = Tensor({N, 3, S, S});
  b.text = Tensor({N, T});
  std::vector<SwitchVector> switches;
  for (std::size_t n = 0; n < N; ++n) {
    const DatasetRecord& r = data_.records[indices[n]];
    b.labels.push_back(r.class_id);
    std::copy(r.image.values().begin(), r.image.values().end(), b.images.values_mut().begin() + n * P);
    b.boxes.push_back(r.bbox);
    b.keypoints.push_back(r.keypoints);
    if (!caption_embeddings_.empty()) {
      const Tensor& emb = caption_embeddings_[indices[n]];
      const auto picks = pick_captions(emb.dim(0), rng);
      for (std::size_t c : picks)
        for (std::size_t k = 0; k < T; ++k)
          b.text.values_mut()[n * T + k] += emb.at(c * T + k) / static_cast<double>(picks.size());
    }
    switches.push_back(sample_switches(r.keypoints, config_.switch_p, rng));
  }
  b.grid = keypoints_to_grid(b.keypoints, config_.net.grid);
  if (config_.zero_keypoints) b.grid = Tensor(b.grid.shape());
  b.kp = keypoints_to_tensor(b.keypoints);
  b.switches = switches_to_tensor(switches);
  return b;
}

DiscriminatorLoss discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits,
                                     const Tensor& mismatch_logits) {
  DiscriminatorLoss l;
  l.real_fake = add(sigmoid_cross_entropy(real_logits, 1.0), sigmoid_cross_entropy(fake_logits, 0.0));
  l.total = add(l.real_fake, scale(sigmoid_cross_entropy(mismatch_logits, 0.0), 0.5));
  return l;
}

Tensor generator_loss(const Tensor& fake_logits) { return sigmoid_cross_entropy(fake_logits, 1.0); }

std::unique_ptr<GanPair> make_gan_pair(BBoxGan& model) { return std::make_unique<BBoxPair>(model); }
std::unique_ptr<GanPair> make_gan_pair(KeypointGan& model) { return std::make_unique<KeypointPair>(model); }
std::unique_ptr<GanPair> make_gan_pair(KeypointCompletion& model) { return std::make_unique<CompletionPair>(model); }

TrainMetrics gan_step(GanPair& pair, AdamState& gen_opt, AdamState& disc_opt, const Batch& batch, Rng& rng) {
  const std::size_t N = batch.size();
  if (N < 2) throw UsageError("gan_step needs a batch of at least two");
  const Tensor z = rng.normal_tensor({N, pair.z_dim()});
  const Batch wrong = mismatch(batch, rng.derangement(N));
  const Tensor real = pair.real(batch);
  const Tensor fake = pair.generate(batch, z, true);

  TrainMetrics m;
  disc_opt.zero_grad();
  const Tensor real_logits = pair.discriminate(real, batch, true);
  const Tensor fake_logits = pair.discriminate(fake.detach(), batch, true);
  const Tensor wrong_logits = pair.discriminate(real, wrong, true);
  const DiscriminatorLoss dl = discriminator_loss(real_logits, fake_logits, wrong_logits);
  backward(dl.total);
  adam_step(disc_opt);
  m.d_loss = dl.total.item();
  m.d_acc_real = fraction(real_logits, true);
  m.d_acc_fake = fraction(fake_logits, false);

  gen_opt.zero_grad();
  pair.disc_store().set_trainable(false);
  try {
    const Tensor gl = generator_loss(pair.discriminate(fake, batch, true));
    backward(gl);
    m.g_loss = gl.item();
  } catch (...) {
    pair.disc_store().set_trainable(true);
    throw;
  }
  pair.disc_store().set_trainable(true);
  adam_step(gen_opt);
  return m;
}

double joint_embedding_step(TextModel& model, AdamState& opt, const Dataset& data, const Batch& batch, Rng& rng) {
  const std::size_t N = batch.size();
  std::vector<std::string> captions;
  Tensor avg({N, N * kCaptionsPerEmbedding});
  for (std::size_t n = 0; n < N; ++n) {
    const auto& pool = data.records[batch.indices[n]].captions;
    const auto picks = pick_captions(pool.size(), rng);
    for (std::size_t j = 0; j < kCaptionsPerEmbedding; ++j) {
      captions.push_back(pool[picks[j % picks.size()]]);
      avg.values_mut()[n * N * kCaptionsPerEmbedding + n * kCaptionsPerEmbedding + j] =
          1.0 / kCaptionsPerEmbedding;
    }
  }
  opt.zero_grad();
  const Tensor text = matmul(avg, model.joint.text.encode(captions));
  const Tensor image = model.joint.image(batch.images);
  const Tensor loss = joint_embedding_loss(image, text, batch.labels);
  backward(loss);
  adam_step(opt);
  return loss.item();
}

EmbeddingAccuracy evaluate_joint_embedding(const TextModel& model, const Dataset& data) {
  NoGradGuard no_grad;
  int classes = 0;
  for (const auto& r : data.records) {
    if (r.class_id < 0) throw UsageError("evaluation needs class labels");
    classes = std::max(classes, r.class_id + 1);
  }
  const std::size_t N = data.records.size(), S = model.image_size, P = 3 * S * S;
  std::vector<int> image_labels, text_labels;
  std::vector<Tensor> image_emb, text_emb;
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < N; start += chunk) {
    const std::size_t n = std::min(chunk, N - start);
    Tensor images({n, 3, S, S});
    std::vector<std::string> captions;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = data.records[start + i];
      std::copy(r.image.values().begin(), r.image.values().end(), images.values_mut().begin() + i * P);
      image_labels.push_back(r.class_id);
      for (const auto& c : r.captions) {
        captions.push_back(c);
        text_labels.push_back(r.class_id);
      }
    }
    image_emb.push_back(model.joint.image(images));
    text_emb.push_back(model.joint.text.encode(captions));
  }
  const Tensor img = concat(image_emb, 0), txt = concat(text_emb, 0);
  const std::size_t T = img.dim(1);
  auto pools = [&](const Tensor& emb, const std::vector<int>& labels) {
    std::vector<std::vector<double>> rows(classes);
    for (std::size_t i = 0; i < labels.size(); ++i)
      rows[labels[i]].insert(rows[labels[i]].end(), emb.values().begin() + i * T, emb.values().begin() + (i + 1) * T);
    std::vector<Tensor> out;
    for (auto& r : rows) {
      if (r.empty()) throw UsageError("evaluation set lacks a class");
      const std::size_t n = r.size() / T;
      out.emplace_back(Shape{n, T}, std::move(r));
    }
    return out;
  };
  auto accuracy = [](const std::vector<int>& predicted, const std::vector<int>& truth) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
    return static_cast<double>(hit) / static_cast<double>(truth.size());
  };
  EmbeddingAccuracy acc;
  acc.image_top1 = accuracy(classify_by_compatibility(img, pools(txt, text_labels)), image_labels);
  acc.text_top1 = accuracy(classify_by_compatibility(txt, pools(img, image_labels)), text_labels);
  return acc;
}

Dataset load_training_data(const TrainConfig& config) {
  if (!config.data_dir.empty()) return load_dataset(config.data_dir);
  ToySceneSpec spec;
  spec.image_size = config.net.image_size;
  return generate_toy_dataset(config.toy_records, config.data_seed, spec);
}

TrainResult train(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  const Dataset data = load_training_data(config);
  return train(config, data, on_step);
}

TrainResult train(const TrainConfig& config, const Dataset& data, const StepCallback& on_step) {
  config.validate();
  if (config.kind == ModelKind::joint_embedding) {
    std::set<int> classes;
    for (const auto& r : data.records) {
      if (r.class_id < 0) throw UsageError("joint-embedding training needs class labels (labels.csv)");
      classes.insert(r.class_id);
    }
    if (classes.size() < 2) throw UsageError("joint-embedding training needs at least two classes");
  }

  Rng init_rng(mix(config.seed, 0));
  Rng batch_rng(mix(config.seed, 1));
  Rng train_rng(mix(config.seed, 2));
  AdamHyper hyper{config.effective_learning_rate(), config.beta1, config.beta2, 1e-8};

  // Text encoder: trained here for the embedding kind, frozen otherwise.
  std::unique_ptr<TextModel> text;
  if (config.kind != ModelKind::joint_embedding && !config.text_checkpoint.empty()) {
    text = load_text_model(load_checkpoint(config.text_checkpoint));
    if (text->text_config.embed_dim != config.net.text_dim)
      throw UsageError("text checkpoint embedding width differs from the network's text width");
  } else {
    Rng text_rng(mix(config.seed, 3));
    text = std::make_unique<TextModel>(config.text, config.net.image_size, text_rng);
    if (config.kind != ModelKind::joint_embedding) text->joint.store.set_trainable(false);
  }

  std::unique_ptr<BBoxGan> bbox;
  std::unique_ptr<KeypointGan> keypoint;
  std::unique_ptr<KeypointCompletion> completion;
  std::unique_ptr<GanPair> pair;
  switch (config.kind) {
    case ModelKind::bbox:
      bbox = std::make_unique<BBoxGan>(config.net, init_rng);
      pair = make_gan_pair(*bbox);
      break;
    case ModelKind::keypoint:
      keypoint = std::make_unique<KeypointGan>(config.net, init_rng);
      pair = make_gan_pair(*keypoint);
      break;
    case ModelKind::keypoint_completion: {
      KeypointNetConfig kc{config.net.z_dim, config.net.text_dim, config.net.parts, config.kp_hidden};
      completion = std::make_unique<KeypointCompletion>(kc, init_rng);
      pair = make_gan_pair(*completion);
      break;
    }
    case ModelKind::joint_embedding: break;
  }

  const bool embedding = config.kind == ModelKind::joint_embedding;
  const BatchSource source(data, embedding ? nullptr : text.get(), config);
  std::unique_ptr<AdamState> gen_opt, disc_opt;
  if (pair) {
    gen_opt = std::make_unique<AdamState>(pair->gen_store().params(), hyper);
    disc_opt = std::make_unique<AdamState>(pair->disc_store().params(), hyper);
  } else {
    gen_opt = std::make_unique<AdamState>(text->joint.store.params(), hyper);
  }

  nlohmann::json manifest = data.manifest.to_json();
  auto snapshot = [&](std::size_t step) {
    Checkpoint ck;
    if (pair) {
      for (auto& t : pair->gen_store().named()) ck.tensors.push_back(t);
      for (auto& t : pair->disc_store().named()) ck.tensors.push_back(t);
    }
    for (auto& t : text->joint.store.named()) ck.tensors.push_back(t);
    // Copies so later updates do not alias into a returned checkpoint.
    for (auto& t : ck.tensors) t.tensor = t.tensor.clone();
    const nlohmann::json cfg = config.to_json();
    ck.meta = {{"model", to_string(config.kind)},
               {"step", step},
               {"config", cfg},
               {"config_hash", fnv1a_hex(cfg.dump())},
               {"net", config.net.to_json()},
               {"text", text_config_json(text->text_config)},
               {"image_size", config.net.image_size},
               {"kp_hidden", config.kp_hidden},
               {"manifest", manifest}};
    return ck;
  };
  auto save = [&](std::size_t step) {
    if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, snapshot(step));
  };

  std::ofstream metrics_out;
  if (!config.metrics_path.empty()) {
    metrics_out.open(config.metrics_path, std::ios::trunc);
    if (!metrics_out) throw IoError("cannot write metrics file " + config.metrics_path);
  }

  TrainResult result;
  std::unique_ptr<BatchQueue> queue;
  if (config.worker_thread && config.steps > 0)
    queue = std::make_unique<BatchQueue>(source, batch_rng, config.steps, 4);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    Batch batch = queue ? queue->pop() : source.next(batch_rng);
    if (embedding) {
      for (int attempt = 0; std::set<int>(batch.labels.begin(), batch.labels.end()).size() < 2; ++attempt) {
        if (attempt > 100) throw UsageError("could not draw a batch with two classes");
        batch = source.next(batch_rng);
      }
    }
    TrainMetrics m;
    try {
      if (embedding) {
        m.embedding = true;
        m.loss = joint_embedding_step(*text, *gen_opt, data, batch, train_rng);
      } else {
        m = gan_step(*pair, *gen_opt, *disc_opt, batch, train_rng);
      }
    } catch (const NumericError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what());
    } catch (const TrainingError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what());
    }
    m.step = step;
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (metrics_out) metrics_out << m.to_json().dump() << "\n" << std::flush;
    if (on_step) on_step(m);
    result.metrics.push_back(m);
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step != config.steps) save(step);
  }
  save(config.steps);
  result.checkpoint = snapshot(config.steps);
  return result;
}

}  // namespace gawwn
