#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gawwn/evaluation.hpp"
#include "gawwn/gradient_suite.hpp"
#include "gawwn/image_io.hpp"
#include "gawwn/service.hpp"
#include "gawwn/training.hpp"

using namespace gawwn;
using nlohmann::json;

namespace {

BBox parse_bbox_flag(const std::string& s) {
  BBox b;
  char c1, c2, c3;
  std::istringstream in(s);
  if (!(in >> b.x0 >> c1 >> b.y0 >> c2 >> b.w >> c3 >> b.h) || c1 != ',' || c2 != ',' || c3 != ',')
    throw InputError("--bbox expects x0,y0,w,h");
  b.validate();
  return b;
}

// "beak:0.8,0.4;tail:0.2,0.6"
json parse_parts_flag(const std::string& s) {
  json out = json::array();
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InputError("keypoints expect part:x,y entries separated by ';'");
    double x = 0, y = 0;
    char comma = 0;
    std::istringstream xy(item.substr(colon + 1));
    if (!(xy >> x >> comma >> y) || comma != ',') throw InputError("bad coordinates in '" + item + "'");
    out.push_back({{"part", item.substr(0, colon)}, {"x", x}, {"y", y}});
  }
  return out;
}

int run_gradcheck(std::uint64_t seed, std::size_t cases, const std::string& filter, bool as_json) {
  json report = json::array();
  bool ok = true;
  double total = 0;
  run_gradient_suite(seed, cases, filter, [&](const GradSuiteResult& r) {
    ok = ok && r.passed;
    total += r.seconds;
    if (as_json) {
      report.push_back(to_json(r));
    } else {
      std::printf("%-30s cases=%-3zu max_rel_error=%.3e tol=%.0e %6.2fs %s\n", r.name.c_str(), r.cases,
                  r.max_rel_error, r.tolerance, r.seconds, r.passed ? "ok" : "FAIL");
      std::fflush(stdout);
    }
  });
  if (as_json)
    std::cout << json{{"results", report}, {"passed", ok}, {"seconds", total}}.dump(2) << "\n";
  else
    std::printf("%s in %.1fs\n", ok ? "all gradients agree" : "GRADIENT CHECK FAILED", total);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text- and location-conditional image GANs"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a procedural toy dataset");
  std::string gen_out;
  std::size_t gen_records = 2000, gen_size = 32, gen_captions = 5;
  std::uint64_t gen_seed = 1;
  double gen_occlusion = 0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--records", gen_records, "Number of scenes");
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--image-size", gen_size, "Image side in pixels");
  gen->add_option("--captions", gen_captions, "Captions per image");
  gen->add_option("--occlusion", gen_occlusion, "Probability of hiding each non-body part")->check(CLI::Range(0.0, 1.0));

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  TrainConfig cfg;
  std::string model_name = "keypoint", net_json;
  bool full_scale = false;
  tr->add_option("--model", model_name, "bbox | keypoint | keypoint-completion | joint-embedding");
  tr->add_option("--steps", cfg.steps, "Optimizer steps");
  tr->add_option("--batch-size", cfg.batch_size);
  tr->add_option("--lr", cfg.learning_rate, "Learning rate (default per model)");
  tr->add_option("--beta1", cfg.beta1);
  tr->add_option("--beta2", cfg.beta2);
  tr->add_option("--seed", cfg.seed);
  tr->add_option("--switch-p", cfg.switch_p, "Probability of observing each keypoint");
  tr->add_option("--data", cfg.data_dir, "Dataset directory (default: in-memory toy data)");
  tr->add_option("--toy-records", cfg.toy_records);
  tr->add_option("--data-seed", cfg.data_seed);
  tr->add_option("--checkpoint", cfg.checkpoint_path, "Checkpoint output path")->required();
  tr->add_option("--text-checkpoint", cfg.text_checkpoint, "Trained joint-embedding checkpoint");
  tr->add_option("--metrics", cfg.metrics_path, "Per-step metrics (NDJSON)");
  tr->add_option("--checkpoint-every", cfg.checkpoint_every);
  tr->add_option("--kp-hidden", cfg.kp_hidden);
  tr->add_flag("--zero-keypoints", cfg.zero_keypoints, "Ablation: train with empty keypoint grids");
  tr->add_flag("--worker-thread", cfg.worker_thread, "Assemble batches on a second thread");
  tr->add_flag("--full-scale", full_scale, "Use the full-size network widths");
  tr->add_option("--net", net_json, "JSON file with network widths");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every operation");
  bool gc_all = false, gc_json = false;
  std::string gc_filter;
  std::uint64_t gc_seed = 1;
  std::size_t gc_cases = 10;
  gc->add_flag("--all", gc_all, "Run every entry");
  gc->add_option("--only", gc_filter, "Run entries whose name contains this string");
  gc->add_option("--seed", gc_seed);
  gc->add_option("--cases", gc_cases, "Random instances per entry")->check(CLI::PositiveNumber);
  gc->add_flag("--json", gc_json, "Print a JSON report");

  // sample
  auto* sa = app.add_subcommand("sample", "Render samples from a checkpoint");
  std::string sa_ckpt, sa_bbox, sa_kp, sa_out = "samples.ppm";
  std::vector<std::string> sa_captions;
  std::size_t sa_n = 4, sa_columns = 0;
  std::uint64_t sa_seed = 0;
  sa->add_option("--checkpoint", sa_ckpt)->required();
  sa->add_option("--caption", sa_captions, "Caption (repeatable; embeddings are averaged)")->required();
  sa->add_option("--bbox", sa_bbox, "x0,y0,w,h in [0,1]");
  sa->add_option("--keypoints", sa_kp, "part:x,y;part:x,y ...");
  sa->add_option("--n", sa_n, "Number of samples")->check(CLI::Range(1, 64));
  sa->add_option("--seed", sa_seed);
  sa->add_option("--columns", sa_columns, "Grid columns (default: all in one row)");
  sa->add_option("--out", sa_out, "Output PPM (keypoint completion prints JSON instead)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Held-out metrics of a checkpoint on fresh toy scenes");
  std::string ev_ckpt, ev_data;
  std::size_t ev_records = 200, ev_count = 50, ev_per = 4;
  std::uint64_t ev_seed = 1000, ev_sample_seed = 1;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data, "Dataset directory (default: fresh toy scenes)");
  ev->add_option("--toy-records", ev_records);
  ev->add_option("--data-seed", ev_seed);
  ev->add_option("--count", ev_count, "Held-out pairs (keypoint GAN) or beak positions (completion)");
  ev->add_option("--per", ev_per, "Samples per pair or position");
  ev->add_option("--seed", ev_sample_seed, "Noise seed");

  // serve
  auto* sv = app.add_subcommand("serve", "Start the HTTP service");
  int sv_port = kDefaultPort;
  std::string sv_host = "0.0.0.0", sv_dir;
  std::vector<std::string> sv_ckpts;
  if (const char* env = std::getenv("GAWWN_CHECKPOINT_DIR")) sv_dir = env;
  sv->add_option("--port", sv_port);
  sv->add_option("--host", sv_host);
  sv->add_option("--checkpoint-dir", sv_dir, "Directory of *.ckpt files (default $GAWWN_CHECKPOINT_DIR)");
  sv->add_option("--checkpoint", sv_ckpts, "Extra checkpoint files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ToySceneSpec spec;
      spec.image_size = gen_size;
      spec.captions_per_image = gen_captions;
      const Dataset data = generate_toy_dataset(gen_records, gen_seed, spec, gen_occlusion);
      write_dataset(gen_out, data);
      std::printf("wrote %zu records to %s\n", data.records.size(), gen_out.c_str());
      return 0;
    }
    if (*tr) {
      cfg.kind = parse_model_kind(model_name);
      if (full_scale) cfg.net = NetConfig::full();
      if (!net_json.empty()) cfg.net = NetConfig::from_json(json::parse(read_file(net_json)));
      cfg.text.embed_dim = cfg.net.text_dim;
      const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
      train(cfg, [&](const TrainMetrics& m) {
        if (m.step % every == 0 || m.step == cfg.steps)
          std::printf("%s\n", m.to_json().dump().c_str()), std::fflush(stdout);
      });
      std::printf("checkpoint written to %s\n", cfg.checkpoint_path.c_str());
      return 0;
    }
    if (*gc) {
      if (!gc_all && gc_filter.empty()) {
        std::fprintf(stderr, "gradcheck: pass --all or --only NAME\n");
        return 2;
      }
      return run_gradcheck(gc_seed, gc_cases, gc_all ? "" : gc_filter, gc_json);
    }
    if (*sa) {
      const Checkpoint ck = load_checkpoint(sa_ckpt);
      ModelSet set;
      add_checkpoint(set, ck, sa_ckpt);
      Service service(std::move(set));
      json req{{"captions", sa_captions}, {"num_samples", sa_n}, {"seed", sa_seed}};
      if (checkpoint_kind(ck) == ModelKind::keypoint_completion) {
        req["observed"] = sa_kp.empty() ? json::array() : parse_parts_flag(sa_kp);
        const HttpResponse r = service.complete_keypoints(req.dump());
        std::cout << r.body.dump(2) << "\n";
        return r.status == 200 ? 0 : 1;
      }
      if (!sa_bbox.empty() && !sa_kp.empty()) throw InputError("give --bbox or --keypoints, not both");
      if (!sa_bbox.empty()) {
        const BBox b = parse_bbox_flag(sa_bbox);
        req["bbox"] = {{"x0", b.x0}, {"y0", b.y0}, {"w", b.w}, {"h", b.h}};
      } else if (!sa_kp.empty()) {
        req["keypoints"] = parse_parts_flag(sa_kp);
      } else {
        throw InputError("give --bbox or --keypoints");
      }
      const HttpResponse r = service.generate(req.dump());
      if (r.status != 200) {
        std::fprintf(stderr, "sample: %s\n", r.body.dump().c_str());
        return 1;
      }
      std::vector<Tensor> images;
      for (const auto& b64 : r.body["images"]) images.push_back(decode_ppm(base64_decode(b64.get<std::string>())));
      write_ppm(sa_out, tile_images(images, sa_columns ? sa_columns : images.size()));
      std::printf("wrote %zu samples to %s\n", images.size(), sa_out.c_str());
      return 0;
    }
    if (*ev) {
      const Checkpoint ck = load_checkpoint(ev_ckpt);
      const auto text = load_text_model(ck);
      ToySceneSpec spec;
      spec.image_size = text->image_size;
      const Dataset data = ev_data.empty() ? generate_toy_dataset(ev_records, ev_seed, spec) : load_dataset(ev_data);
      json out;
      switch (checkpoint_kind(ck)) {
        case ModelKind::joint_embedding: {
          const EmbeddingAccuracy acc = evaluate_joint_embedding(*text, data);
          out = {{"image_top1", acc.image_top1}, {"text_top1", acc.text_top1}};
          break;
        }
        case ModelKind::keypoint:
          out = evaluate_location_control(*load_keypoint_gan(ck), *text, data, ev_count, ev_per, ev_sample_seed).to_json();
          break;
        case ModelKind::keypoint_completion:
          out = evaluate_completion(*load_keypoint_completion(ck), *text, data, ev_count, ev_per, ev_sample_seed).to_json();
          break;
        case ModelKind::bbox:
          throw UsageError("no held-out metric is defined for bbox checkpoints");
      }
      std::printf("%s\n", out.dump().c_str());
      return 0;
    }
    if (*sv) {
      ModelSet set = sv_dir.empty() ? ModelSet{} : load_model_dir(sv_dir);
      for (const auto& path : sv_ckpts) add_checkpoint(set, load_checkpoint(path), path);
      Service service(std::move(set));
      if (!sv_dir.empty()) service.set_checkpoint_dir(sv_dir);
      const auto loaded = service.models()->loaded();
      std::string names;
      for (const auto& n : loaded) names += (names.empty() ? "" : ", ") + n;
      std::printf("serving on %s:%d, models: %s\n", sv_host.c_str(), sv_port, names.empty() ? "none" : names.c_str());
      std::fflush(stdout);
      service.listen(sv_host, sv_port);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
