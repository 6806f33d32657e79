#include "gawwn/service.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <variant>

#include <httplib.h>

#include "gawwn/image_io.hpp"

namespace gawwn {

namespace {

using nlohmann::json;

constexpr std::size_t kMaxSamples = 64;
constexpr std::size_t kMaxInterpolationSteps = 64;

struct BadRequest {
  int status;
  std::string message;
  std::string field;
};

[[noreturn]] void bad(std::string field, std::string message, int status = 400) {
  throw BadRequest{status, std::move(message), std::move(field)};
}

HttpResponse error_response(const BadRequest& e) {
  json body{{"error", e.message}};
  body["field"] = e.field.empty() ? json(nullptr) : json(e.field);
  return {e.status, body};
}

json parse_body(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    bad("", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) bad("", "request body must be a JSON object");
  return j;
}

std::vector<std::string> parse_captions(const json& req) {
  const bool one = req.contains("caption"), many = req.contains("captions");
  if (one && many) bad("caption", "give either caption or captions, not both");
  if (!one && !many) bad("caption", "a caption is required");
  std::vector<std::string> out;
  if (one) {
    if (!req["caption"].is_string()) bad("caption", "caption must be a string");
    out.push_back(req["caption"]);
  } else {
    if (!req["captions"].is_array() || req["captions"].empty()) bad("captions", "captions must be a non-empty list");
    for (const auto& c : req["captions"]) {
      if (!c.is_string()) bad("captions", "every caption must be a string");
      out.push_back(c);
    }
  }
  for (const auto& c : out) {
    try {
      caption_to_ids(c);
    } catch (const InputError& e) {
      bad(one ? "caption" : "captions", e.what());
    }
  }
  return out;
}

std::size_t parse_count(const json& req, const char* field, std::size_t fallback, std::size_t lo, std::size_t hi) {
  if (!req.contains(field)) return fallback;
  const json& v = req[field];
  if (!v.is_number_integer()) bad(field, std::string(field) + " must be an integer");
  const auto n = v.get<std::int64_t>();
  if (n < static_cast<std::int64_t>(lo) || n > static_cast<std::int64_t>(hi))
    bad(field, std::string(field) + " must be in [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
  return static_cast<std::size_t>(n);
}

std::uint64_t parse_seed(const json& req) {
  if (!req.contains("seed") || req["seed"].is_null()) return std::random_device{}() & 0xffffffffULL;
  const json& v = req["seed"];
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    bad("seed", "seed must be a non-negative integer");
  return v.get<std::uint64_t>();
}

double parse_unit(const json& obj, const char* key, const std::string& field) {
  if (!obj.contains(key) || !obj[key].is_number()) bad(field, std::string(key) + " must be a number");
  const double v = obj[key];
  if (!(v >= 0 && v <= 1)) bad(field, std::string(key) + " must be in [0,1]");
  return v;
}

BBox parse_bbox(const json& j, const std::string& field) {
  if (!j.is_object()) bad(field, "bbox must be an object {x0,y0,w,h}");
  BBox b{parse_unit(j, "x0", field), parse_unit(j, "y0", field), parse_unit(j, "w", field),
         parse_unit(j, "h", field)};
  try {
    b.validate();
  } catch (const GeometryError& e) {
    bad(field, e.what());
  }
  return b;
}

// Listed parts become visible keypoints; all others are absent.
KeypointSet parse_parts(const json& j, const Manifest& manifest, const std::string& field) {
  if (!j.is_array()) bad(field, "expected a list of {part, x, y}");
  KeypointSet kp(manifest.part_names.size(), Keypoint{0, 0, 0});
  for (const auto& p : j) {
    if (!p.is_object() || !p.contains("part") || !p["part"].is_string()) bad(field, "every entry needs a part name");
    const std::string name = p["part"];
    const auto it = std::find(manifest.part_names.begin(), manifest.part_names.end(), name);
    if (it == manifest.part_names.end()) bad(field, "unknown part '" + name + "'");
    Keypoint& k = kp[static_cast<std::size_t>(it - manifest.part_names.begin())];
    if (k.v != 0) bad(field, "part '" + name + "' given twice");
    k = {parse_unit(p, "x", field), parse_unit(p, "y", field), 1.0};
  }
  return kp;
}

using Location = std::variant<BBox, KeypointSet>;

Location parse_location(const json& obj, const Manifest& manifest, const std::string& prefix) {
  if (!obj.is_object()) bad(prefix, "location must be an object");
  const bool has_box = obj.contains("bbox"), has_kp = obj.contains("keypoints");
  if (has_box && has_kp) bad(prefix.empty() ? "location" : prefix, "give either bbox or keypoints, not both");
  if (!has_box && !has_kp) bad(prefix.empty() ? "location" : prefix, "a bbox or keypoints location is required");
  const std::string dot = prefix.empty() ? "" : prefix + ".";
  if (has_box) return parse_bbox(obj["bbox"], dot + "bbox");
  return parse_parts(obj["keypoints"], manifest, dot + "keypoints");
}

Location lerp(const Location& a, const Location& b, double f) {
  if (const auto* ba = std::get_if<BBox>(&a)) {
    const BBox& bb = std::get<BBox>(b);
    return BBox{ba->x0 + f * (bb.x0 - ba->x0), ba->y0 + f * (bb.y0 - ba->y0), ba->w + f * (bb.w - ba->w),
                ba->h + f * (bb.h - ba->h)};
  }
  KeypointSet out = std::get<KeypointSet>(a);
  const KeypointSet& kb = std::get<KeypointSet>(b);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].x += f * (kb[k].x - out[k].x);
    out[k].y += f * (kb[k].y - out[k].y);
  }
  return out;
}

Tensor caption_vector(const TextModel& text, const std::vector<std::string>& captions) {
  const Tensor emb = text.embed(captions);
  const std::size_t T = emb.dim(1);
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < captions.size(); ++i)
    rows.push_back(Tensor({T}, std::vector<double>(emb.values().begin() + i * T, emb.values().begin() + (i + 1) * T)));
  return average_caption_embeddings(rows);
}

json keypoints_json(const KeypointSet& kp, const Manifest& manifest) {
  json out = json::array();
  for (std::size_t k = 0; k < kp.size(); ++k)
    out.push_back({{"part", manifest.part_names[k]}, {"x", kp[k].x}, {"y", kp[k].y}, {"visible", kp[k].v > 0.5}});
  return out;
}

Manifest default_manifest() {
  Manifest m;
  m.part_names = toy_part_names();
  m.class_names = toy_class_names();
  m.image_size = ToySceneSpec{}.image_size;
  return m;
}

}  // namespace

std::vector<std::string> ModelSet::loaded() const {
  std::vector<std::string> out;
  if (bbox) out.push_back(to_string(ModelKind::bbox));
  if (keypoint) out.push_back(to_string(ModelKind::keypoint));
  if (completion) out.push_back(to_string(ModelKind::keypoint_completion));
  return out;
}

void add_checkpoint(ModelSet& set, const Checkpoint& ck, const std::string& source) {
  const ModelKind kind = checkpoint_kind(ck);
  std::shared_ptr<const TextModel> text = load_text_model(ck);
  std::size_t parts = 0;
  switch (kind) {
    case ModelKind::bbox:
      set.bbox = load_bbox_gan(ck);
      set.bbox_text = text;
      parts = set.bbox->config.parts;
      break;
    case ModelKind::keypoint:
      set.keypoint = load_keypoint_gan(ck);
      set.keypoint_text = text;
      parts = set.keypoint->config.parts;
      break;
    case ModelKind::keypoint_completion:
      set.completion = load_keypoint_completion(ck);
      set.completion_text = text;
      parts = set.completion->config.num_parts;
      break;
    case ModelKind::joint_embedding:
      throw UsageError("joint-embedding checkpoints are not served");
  }
  if (ck.meta.contains("manifest") && ck.meta["manifest"].is_object())
    set.manifest = Manifest::from_json(ck.meta["manifest"]);
  if (set.manifest.part_names.empty()) set.manifest = default_manifest();
  if (set.manifest.part_names.size() != parts)
    throw UsageError("checkpoint has " + std::to_string(parts) + " parts but the manifest lists " +
                     std::to_string(set.manifest.part_names.size()));
  if (!source.empty()) set.sources.push_back(source);
}

ModelSet load_model_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("checkpoint directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ModelSet set;
  for (const auto& f : files) {
    const Checkpoint ck = load_checkpoint(f.string());
    if (checkpoint_kind(ck) == ModelKind::joint_embedding) continue;
    add_checkpoint(set, ck, f.string());
  }
  return set;
}

Service::Service(ModelSet models) { swap_models(std::move(models)); }

Service::~Service() { stop(); }

void Service::swap_models(ModelSet models) {
  if (models.manifest.part_names.empty()) models.manifest = default_manifest();
  auto next = std::make_shared<const ModelSet>(std::move(models));
  std::lock_guard lock(models_mutex_);
  models_ = std::move(next);
}

std::shared_ptr<const ModelSet> Service::models() const {
  std::lock_guard lock(models_mutex_);
  return models_;
}

HttpResponse Service::manifest() const {
  const auto m = models();
  return {200,
          {{"parts", m->manifest.part_names},
           {"classes", m->manifest.class_names},
           {"image_size", m->manifest.image_size},
           {"models_loaded", m->loaded()}}};
}

HttpResponse Service::generate(const std::string& body) const {
  try {
    const auto models = this->models();
    const Manifest& manifest = models->manifest;
    const json req = parse_body(body);
    const auto captions = parse_captions(req);
    const std::size_t n = parse_count(req, "num_samples", 1, 1, kMaxSamples);
    const std::uint64_t seed = parse_seed(req);

    std::vector<Location> path;
    if (req.contains("interpolate")) {
      if (req.contains("bbox") || req.contains("keypoints"))
        bad("interpolate", "interpolate carries its own locations; drop the top-level bbox/keypoints");
      const json& it = req["interpolate"];
      if (!it.is_object()) bad("interpolate", "interpolate must be an object");
      if (!it.contains("from_location")) bad("interpolate.from_location", "missing");
      if (!it.contains("to_location")) bad("interpolate.to_location", "missing");
      const Location from = parse_location(it["from_location"], manifest, "interpolate.from_location");
      const Location to = parse_location(it["to_location"], manifest, "interpolate.to_location");
      if (from.index() != to.index()) bad("interpolate.to_location", "both ends must use the same location mode");
      if (const auto* a = std::get_if<KeypointSet>(&from)) {
        const auto& b = std::get<KeypointSet>(to);
        for (std::size_t k = 0; k < a->size(); ++k)
          if ((*a)[k].v != b[k].v) bad("interpolate.to_location", "both ends must list the same parts");
      }
      const std::size_t steps = parse_count(it, "steps", 2, 1, kMaxInterpolationSteps);
      for (std::size_t s = 0; s < steps; ++s)
        path.push_back(lerp(from, to, steps == 1 ? 0.0 : static_cast<double>(s) / static_cast<double>(steps - 1)));
    } else {
      path.push_back(parse_location(req, manifest, ""));
    }
    const bool box_mode = std::holds_alternative<BBox>(path.front());
    if (box_mode && !models->bbox) bad("bbox", "no bounding-box model is loaded", 409);
    if (!box_mode && !models->keypoint) bad("keypoints", "no keypoint model is loaded", 409);

    NoGradGuard no_grad;
    const TextModel& text = box_mode ? *models->bbox_text : *models->keypoint_text;
    const NetConfig& cfg = box_mode ? models->bbox->config : models->keypoint->config;
    const Tensor t1 = caption_vector(text, captions);

    // Row i keeps one z across every step of the path.
    Rng rng(seed);
    const Tensor z1 = rng.normal_tensor({n, cfg.z_dim});
    const std::size_t steps = path.size(), B = n * steps;
    Tensor z({B, cfg.z_dim});
    std::vector<BBox> boxes;
    std::vector<KeypointSet> kps;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = 0; s < steps; ++s) {
        std::copy_n(z1.values().begin() + i * cfg.z_dim, cfg.z_dim, z.values_mut().begin() + (i * steps + s) * cfg.z_dim);
        if (box_mode) boxes.push_back(std::get<BBox>(path[s]));
        else kps.push_back(std::get<KeypointSet>(path[s]));
      }
    const Tensor t = replicate_rows(t1, B);
    const Tensor images = box_mode ? models->bbox->G(z, t, boxes, false).image
                                   : models->keypoint->G(z, t, keypoints_to_grid(kps, cfg.grid), false).image;
    const std::size_t S = cfg.image_size, P = 3 * S * S;
    json out = json::array();
    for (std::size_t b = 0; b < B; ++b) {
      const Tensor img({3, S, S}, std::vector<double>(images.values().begin() + b * P, images.values().begin() + (b + 1) * P));
      out.push_back(base64_encode(encode_ppm(img)));
    }
    return {200,
            {{"images", out},
             {"seed", seed},
             {"mode", box_mode ? "bbox" : "keypoints"},
             {"num_samples", n},
             {"steps", steps},
             {"image_size", S}}};
  } catch (const BadRequest& e) {
    return error_response(e);
  }
}

HttpResponse Service::complete_keypoints(const std::string& body) const {
  try {
    const auto models = this->models();
    const Manifest& manifest = models->manifest;
    const json req = parse_body(body);
    const auto captions = parse_captions(req);
    const KeypointSet observed = parse_parts(req.value("observed", json::array()), manifest, "observed");
    const std::size_t n = parse_count(req, "num_samples", 1, 1, kMaxSamples);
    const std::uint64_t seed = parse_seed(req);
    if (!models->completion) bad("observed", "no keypoint-completion model is loaded", 409);

    NoGradGuard no_grad;
    const KeypointCompletion& m = *models->completion;
    SwitchVector s(observed.size());
    for (std::size_t k = 0; k < observed.size(); ++k) s[k] = observed[k].v > 0 ? 1 : 0;
    const std::vector<KeypointSet> kp_rows(n, observed);
    const std::vector<SwitchVector> s_rows(n, s);
    Rng rng(seed);
    const Tensor z = rng.normal_tensor({n, m.config.z_dim});
    const Tensor t = replicate_rows(caption_vector(*models->completion_text, captions), n);
    const Tensor out = m.G(z, t, keypoints_to_tensor(kp_rows), switches_to_tensor(s_rows));
    json sets = json::array();
    for (std::size_t i = 0; i < n; ++i) sets.push_back(keypoints_json(keypoints_from_row(out, i, observed, s), manifest));
    return {200, {{"keypoint_sets", sets}, {"seed", seed}}};
  } catch (const BadRequest& e) {
    return error_response(e);
  }
}

HttpResponse Service::reload() {
  if (checkpoint_dir_.empty()) return {409, {{"error", "no checkpoint directory configured"}, {"field", nullptr}}};
  swap_models(load_model_dir(checkpoint_dir_));
  return manifest();
}

void Service::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  // httplib's default adds SO_REUSEPORT, which lets a second server share a
  // busy port silently; keep only SO_REUSEADDR so "port in use" is reported.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  auto send = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server_->Get("/api/manifest", [=, this](const httplib::Request&, httplib::Response& res) { send(res, manifest()); });
  server_->Post("/api/generate",
                [=, this](const httplib::Request& req, httplib::Response& res) { send(res, generate(req.body)); });
  server_->Post("/api/complete-keypoints", [=, this](const httplib::Request& req, httplib::Response& res) {
    send(res, complete_keypoints(req.body));
  });
  server_->Post("/api/reload", [=, this](const httplib::Request&, httplib::Response& res) { send(res, reload()); });
  server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server_->set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, {500, {{"error", what}, {"field", nullptr}}});
  });
}

void Service::listen(const std::string& host, int port) {
  install_routes();
  if (!server_->bind_to_port(host, port))
    throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  server_->listen_after_bind();
}

int Service::bind_any_port(const std::string& host) {
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port < 0) throw IoError("cannot bind an ephemeral port on " + host);
  return port;
}

void Service::listen_after_bind() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace gawwn
