#include <doctest.h>

#include <filesystem>
#include <future>
#include <thread>

#include <httplib.h>

#include "gawwn/image_io.hpp"
#include "gawwn/service.hpp"
#include "gawwn/training.hpp"

using namespace gawwn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Checkpoint untrained(ModelKind kind) {
  TrainConfig c;
  c.kind = kind;
  c.steps = 0;
  c.toy_records = 4;
  c.kp_hidden = 32;
  c.seed = 3;
  return train(c).checkpoint;
}

const ModelSet& all_models() {
  static const ModelSet set = [] {
    ModelSet s;
    for (ModelKind k : {ModelKind::bbox, ModelKind::keypoint, ModelKind::keypoint_completion})
      add_checkpoint(s, untrained(k));
    return s;
  }();
  return set;
}

// A service on an ephemeral localhost port, stopped on destruction.
struct Running {
  Service service;
  int port = 0;
  std::thread thread;
  explicit Running(ModelSet set) : service(std::move(set)) {
    port = service.bind_any_port("127.0.0.1");
    thread = std::thread([this] { service.listen_after_bind(); });
  }
  ~Running() {
    service.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  const auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  return json::parse(res->body);
}

json part(const std::string& name, double x, double y) { return {{"part", name}, {"x", x}, {"y", y}}; }

const json kBox = {{"x0", 0.2}, {"y0", 0.2}, {"w", 0.6}, {"h", 0.6}};

}  // namespace

TEST_SUITE("service") {

TEST_CASE("manifest before any checkpoint is loaded") {
  Running r{ModelSet{}};
  auto c = r.client();
  const auto res = c.Get("/api/manifest");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  const json j = json::parse(res->body);
  CHECK(j["models_loaded"].empty());
  CHECK(j["parts"].size() == 5);
  CHECK(j["classes"].size() == 5);
  CHECK(j["image_size"] == 32);
  // Every mode answers 409 without its model.
  post(c, "/api/generate", {{"caption", "a red bird"}, {"bbox", kBox}}, 409);
  const json e = post(c, "/api/generate", {{"caption", "a red bird"}, {"keypoints", {part("beak", 0.5, 0.5)}}}, 409);
  CHECK(e["field"] == "keypoints");
  post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"observed", json::array()}}, 409);
}

TEST_CASE("manifest with models") {
  Running r{all_models()};
  auto c = r.client();
  const json j = json::parse(c.Get("/api/manifest")->body);
  CHECK(j["models_loaded"] == json({"bbox", "keypoint", "keypoint-completion"}));
  CHECK(j["parts"] == json(toy_part_names()));
  const auto opt = c.Options("/api/generate");
  REQUIRE(opt);
  CHECK(opt->status == 204);
  CHECK(opt->get_header_value("Access-Control-Allow-Origin") == "*");
}

TEST_CASE("generate: bbox and keypoints together is a conflict") {
  Running r{all_models()};
  auto c = r.client();
  const json e = post(c, "/api/generate",
                      {{"caption", "a red bird"}, {"bbox", kBox}, {"keypoints", {part("beak", 0.5, 0.5)}}}, 400);
  CHECK(e["field"] == "location");
  CHECK(e["error"].get<std::string>().find("not both") != std::string::npos);
}

TEST_CASE("generate: fixed seed gives identical bytes") {
  Running r{all_models()};
  auto c = r.client();
  for (const json& loc : {json{{"bbox", kBox}}, json{{"keypoints", {part("beak", 0.7, 0.4), part("body", 0.5, 0.5)}}}}) {
    json req = loc;
    req["caption"] = "a red bird";
    req["num_samples"] = 1;
    req["seed"] = 42;
    const auto a = c.Post("/api/generate", req.dump(), "application/json");
    const auto b = c.Post("/api/generate", req.dump(), "application/json");
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->status == 200);
    CHECK(a->body == b->body);
    const json j = json::parse(a->body);
    CHECK(j["seed"] == 42);
    REQUIRE(j["images"].size() == 1);
    const Tensor img = decode_ppm(base64_decode(j["images"][0].get<std::string>()));
    CHECK(img.shape() == Shape{3, 32, 32});
    req["seed"] = 43;
    CHECK(json::parse(c.Post("/api/generate", req.dump(), "application/json")->body)["images"] != j["images"]);
  }
  // Without a seed the service picks one and reports it; replaying it reproduces the images.
  const json first = post(c, "/api/generate", {{"caption", "a blue bird"}, {"bbox", kBox}, {"num_samples", 2}}, 200);
  const json again = post(c, "/api/generate",
                          {{"caption", "a blue bird"}, {"bbox", kBox}, {"num_samples", 2}, {"seed", first["seed"]}}, 200);
  CHECK(first["images"] == again["images"]);
}

TEST_CASE("generate: several captions and sample counts") {
  Running r{all_models()};
  auto c = r.client();
  const json j = post(c, "/api/generate",
                      {{"captions", {"a red bird", "this bird is red"}}, {"bbox", kBox}, {"num_samples", 4}, {"seed", 1}}, 200);
  CHECK(j["images"].size() == 4);
  CHECK(j["mode"] == "bbox");
  post(c, "/api/generate", {{"caption", "x"}, {"captions", {"y"}}, {"bbox", kBox}}, 400);
  post(c, "/api/generate", {{"bbox", kBox}}, 400);
  post(c, "/api/generate", {{"caption", "a red bird"}, {"bbox", kBox}, {"num_samples", 0}}, 400);
  post(c, "/api/generate", {{"caption", "a red bird"}, {"bbox", kBox}, {"num_samples", 65}}, 400);
  post(c, "/api/generate", {{"caption", "a red bird"}, {"bbox", kBox}, {"seed", -1}}, 400);
  post(c, "/api/generate", {{"caption", "a red bird"}}, 400);
  const json bad_box = post(c, "/api/generate",
                            {{"caption", "a red bird"}, {"bbox", {{"x0", 0.6}, {"y0", 0.2}, {"w", 0.6}, {"h", 0.6}}}}, 400);
  CHECK(bad_box["field"] == "bbox");
  const json bad_char = post(c, "/api/generate", {{"caption", "a red bird \x01"}, {"bbox", kBox}}, 400);
  CHECK(bad_char["field"] == "caption");
  const auto raw = c.Post("/api/generate", "{not json", "application/json");
  REQUIRE(raw);
  CHECK(raw->status == 400);
}

TEST_CASE("generate: interpolation returns steps x samples with z fixed per row") {
  Running r{all_models()};
  auto c = r.client();
  const json from{{"bbox", {{"x0", 0.0}, {"y0", 0.1}, {"w", 0.4}, {"h", 0.4}}}};
  const json to{{"bbox", {{"x0", 0.6}, {"y0", 0.5}, {"w", 0.4}, {"h", 0.4}}}};
  const json j = post(c, "/api/generate",
                      {{"caption", "a red bird"},
                       {"num_samples", 2},
                       {"seed", 5},
                       {"interpolate", {{"from_location", from}, {"to_location", to}, {"steps", 3}}}},
                      200);
  CHECK(j["steps"] == 3);
  REQUIRE(j["images"].size() == 6);
  // Sample-major: the first step of row 0 equals a plain request at the start box with the same seed.
  const json plain = post(c, "/api/generate", {{"caption", "a red bird"}, {"num_samples", 2}, {"seed", 5}, {"bbox", from["bbox"]}}, 200);
  CHECK(j["images"][0] == plain["images"][0]);
  CHECK(j["images"][3] == plain["images"][1]);
  CHECK(j["images"][0] != j["images"][1]);

  const json kfrom{{"keypoints", {part("beak", 0.2, 0.4)}}}, kto{{"keypoints", {part("beak", 0.8, 0.4)}}};
  const json k = post(c, "/api/generate",
                      {{"caption", "a red bird"}, {"interpolate", {{"from_location", kfrom}, {"to_location", kto}, {"steps", 4}}}}, 200);
  CHECK(k["images"].size() == 4);
  CHECK(k["mode"] == "keypoints");

  post(c, "/api/generate",
       {{"caption", "a red bird"}, {"interpolate", {{"from_location", from}, {"to_location", kto}}}}, 400);
  post(c, "/api/generate",
       {{"caption", "a red bird"},
        {"interpolate", {{"from_location", kfrom}, {"to_location", {{"keypoints", {part("tail", 0.2, 0.4)}}}}}}},
       400);
  post(c, "/api/generate",
       {{"caption", "a red bird"}, {"bbox", kBox}, {"interpolate", {{"from_location", from}, {"to_location", to}}}}, 400);
  post(c, "/api/generate",
       {{"caption", "a red bird"}, {"interpolate", {{"from_location", from}, {"to_location", to}, {"steps", 0}}}}, 400);
}

TEST_CASE("complete-keypoints: echo, range and errors") {
  Running r{all_models()};
  auto c = r.client();
  const std::vector<std::string> names = toy_part_names();

  // All parts observed: every returned set equals the input exactly.
  json all = json::array();
  const double xs[] = {0.5, 0.62, 0.71, 0.3, 0.45};
  for (std::size_t k = 0; k < names.size(); ++k) all.push_back(part(names[k], xs[k], 0.1 + 0.15 * k));
  const json full = post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"observed", all}, {"num_samples", 8}}, 200);
  REQUIRE(full["keypoint_sets"].size() == 8);
  for (const auto& set : full["keypoint_sets"]) {
    REQUIRE(set.size() == names.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
      CHECK(set[k]["part"] == names[k]);
      CHECK(set[k]["x"].get<double>() == all[k]["x"].get<double>());
      CHECK(set[k]["y"].get<double>() == all[k]["y"].get<double>());
      CHECK(set[k]["visible"] == true);
    }
  }

  // Nothing observed: unconditional samples, coordinates in [0,1].
  const json none = post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"num_samples", 16}, {"seed", 2}}, 200);
  CHECK(none["seed"] == 2);
  for (const auto& set : none["keypoint_sets"])
    for (const auto& p : set) {
      CHECK(p["x"].get<double>() >= 0.0);
      CHECK(p["x"].get<double>() <= 1.0);
      CHECK(p["y"].get<double>() >= 0.0);
      CHECK(p["y"].get<double>() <= 1.0);
    }

  // A subset is echoed bitwise, including awkward binary fractions.
  const json some = post(c, "/api/complete-keypoints",
                         {{"caption", "a red bird"}, {"observed", {part("beak", 0.1 + 0.2, 1.0 / 3.0)}}, {"num_samples", 5}}, 200);
  for (const auto& set : some["keypoint_sets"]) {
    CHECK(set[2]["x"].get<double>() == 0.1 + 0.2);
    CHECK(set[2]["y"].get<double>() == 1.0 / 3.0);
  }

  const json unknown = post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"observed", {part("claw", 0.5, 0.5)}}}, 400);
  CHECK(unknown["field"] == "observed");
  CHECK(unknown["error"].get<std::string>().find("claw") != std::string::npos);
  post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"observed", {part("beak", 0.5, 0.5), part("beak", 0.4, 0.5)}}}, 400);
  post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"observed", {part("beak", 1.5, 0.5)}}}, 400);

  const json a = post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"num_samples", 3}, {"seed", 9}}, 200);
  const json b = post(c, "/api/complete-keypoints", {{"caption", "a red bird"}, {"num_samples", 3}, {"seed", 9}}, 200);
  CHECK(a == b);
}

TEST_CASE("concurrent requests match serial ones") {
  Running r{all_models()};
  std::vector<json> reqs;
  for (int i = 0; i < 8; ++i)
    reqs.push_back({{"caption", "a red bird"}, {"bbox", kBox}, {"num_samples", 2}, {"seed", i}});
  std::vector<std::string> serial;
  {
    auto c = r.client();
    for (const auto& q : reqs) serial.push_back(c.Post("/api/generate", q.dump(), "application/json")->body);
  }
  std::vector<std::future<std::string>> futures;
  for (const auto& q : reqs)
    futures.push_back(std::async(std::launch::async, [&r, q] {
      auto c = r.client();
      const auto res = c.Post("/api/generate", q.dump(), "application/json");
      return res ? res->body : std::string();
    }));
  for (std::size_t i = 0; i < reqs.size(); ++i) CHECK(futures[i].get() == serial[i]);
}

TEST_CASE("reload from a checkpoint directory") {
  const fs::path dir = fs::temp_directory_path() / "gawwn_test_reload";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Running r{ModelSet{}};
  auto c = r.client();
  post(c, "/api/reload", json::object(), 409);
  r.service.set_checkpoint_dir(dir.string());
  CHECK(post(c, "/api/reload", json::object(), 200)["models_loaded"].empty());
  save_checkpoint((dir / "a.ckpt").string(), untrained(ModelKind::keypoint_completion));
  save_checkpoint((dir / "b.ckpt").string(), untrained(ModelKind::joint_embedding));
  CHECK(post(c, "/api/reload", json::object(), 200)["models_loaded"] == json({"keypoint-completion"}));
  post(c, "/api/complete-keypoints", {{"caption", "a red bird"}}, 200);
  fs::remove_all(dir);
}

TEST_CASE("model sets") {
  ModelSet s;
  CHECK_THROWS_AS(add_checkpoint(s, untrained(ModelKind::joint_embedding)), UsageError);
  CHECK_THROWS_AS(load_model_dir("/nonexistent/gawwn"), IoError);
  Service busy{ModelSet{}};
  const int port = busy.bind_any_port("127.0.0.1");
  Service second{ModelSet{}};
  CHECK_THROWS_AS(second.listen("127.0.0.1", port), IoError);
}

}  // TEST_SUITE
