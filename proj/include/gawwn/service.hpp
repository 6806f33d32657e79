#pragma once

// HTTP inference service over the trained generators.

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gawwn/models.hpp"
#include "gawwn/toy_data.hpp"

namespace httplib {
class Server;
}

namespace gawwn {

/// Immutable set of loaded models; requests hold a shared reference for their
/// whole lifetime so a reload never changes weights under a running request.
struct ModelSet {
  Manifest manifest;
  std::shared_ptr<const TextModel> bbox_text, keypoint_text, completion_text;
  std::shared_ptr<const BBoxGan> bbox;
  std::shared_ptr<const KeypointGan> keypoint;
  std::shared_ptr<const KeypointCompletion> completion;
  std::vector<std::string> sources;  // checkpoint files, for logging

  std::vector<std::string> loaded() const;
};

/// Adds one checkpoint to a model set, replacing any model of the same kind.
/// Joint-embedding checkpoints are rejected with UsageError.
void add_checkpoint(ModelSet& set, const Checkpoint& ck, const std::string& source = "");

/// Loads every *.ckpt in `dir` (sorted by name; later files win per kind).
ModelSet load_model_dir(const std::string& dir);

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  explicit Service(ModelSet models = {});
  ~Service();

  /// Atomically replaces the active model set.
  void swap_models(ModelSet models);
  std::shared_ptr<const ModelSet> models() const;

  // Request handlers over raw bodies, usable without a socket.
  HttpResponse manifest() const;
  HttpResponse generate(const std::string& body) const;
  HttpResponse complete_keypoints(const std::string& body) const;

  /// Binds and serves until stop(). Throws IoError if the port cannot be bound.
  void listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it; serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  void listen_after_bind();
  void stop();

  /// When set, POST /api/reload re-reads this directory.
  void set_checkpoint_dir(std::string dir) { checkpoint_dir_ = std::move(dir); }

 private:
  HttpResponse reload();
  void install_routes();

  mutable std::mutex models_mutex_;
  std::shared_ptr<const ModelSet> models_;
  std::string checkpoint_dir_;
  std::unique_ptr<httplib::Server> server_;
};

constexpr int kDefaultPort = 8642;

}  // namespace gawwn
