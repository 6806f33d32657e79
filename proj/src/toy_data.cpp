#include "gawwn/toy_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gawwn/image_io.hpp"

namespace fs = std::filesystem;

namespace gawwn {

namespace {

Rgb darker(const Rgb& c) { return {0.6 * c[0], 0.6 * c[1], 0.6 * c[2]}; }

ClassPalette palette(std::string body_name, Rgb body, std::string beak_name, Rgb beak) {
  return {body_name, "dark " + body_name, std::move(beak_name), body, darker(body), beak};
}

struct CaptionTemplate {
  const char* text;
  std::vector<ToyPart> needs;
};

const std::vector<CaptionTemplate>& caption_templates() {
  static const std::vector<CaptionTemplate> templates = {
      {"a {body} bird with a {beak} beak facing {dir}", {kBeak}},
      {"this bird is {body} with a {beak} beak", {kBeak}},
      {"a small {body} bird with {shade} wings", {kWing}},
      {"this {body} bird has a {shade} tail", {kTail}},
      {"a {body} bird facing {dir}", {}},
      {"this {body} bird is looking to the {dir}", {kHead}},
      {"a bird with a {body} body and a {body} head", {kHead}},
      {"the bird is mostly {body}", {}},
      {"a {body} bird", {}},
      {"a {body} bird with {shade} wings and a {beak} beak", {kWing, kBeak}},
      {"this {body} colored bird faces {dir}", {}},
  };
  return templates;
}

std::string fill_template(std::string text, const ClassPalette& p, bool facing_right) {
  const std::pair<const char*, std::string> slots[] = {
      {"{body}", p.body_name}, {"{shade}", p.shade_name}, {"{beak}", p.beak_name},
      {"{dir}", facing_right ? "right" : "left"}};
  for (const auto& [slot, value] : slots)
    for (std::size_t at = text.find(slot); at != std::string::npos; at = text.find(slot))
      text.replace(at, std::string_view(slot).size(), value);
  for (std::size_t at = text.find(" a "); at != std::string::npos; at = text.find(" a ", at + 1))
    if (std::string_view("aeiou").find(text[at + 3]) != std::string_view::npos) text.insert(at + 2, "n");
  return text;
}

std::vector<std::string> make_captions(const ToyScene& scene, int class_id, std::size_t count, Rng& rng) {
  std::vector<std::size_t> eligible;
  const auto& templates = caption_templates();
  for (std::size_t i = 0; i < templates.size(); ++i) {
    bool ok = true;
    for (ToyPart part : templates[i].needs) ok = ok && scene.visible[part];
    if (ok) eligible.push_back(i);
  }
  std::vector<std::string> out;
  auto order = rng.permutation(eligible.size());
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(fill_template(templates[eligible[order[i % order.size()]]].text,
                                toy_palettes()[static_cast<std::size_t>(class_id)], scene.facing_right));
  return out;
}

int class_of(const ToyScene& scene) {
  const auto& palettes = toy_palettes();
  for (std::size_t c = 0; c < palettes.size(); ++c)
    if (palettes[c].body == scene.parts[kBody].color) return static_cast<int>(c);
  throw UsageError("scene body color is not a class palette color");
}

bool inside(const Ellipse& e, double x, double y) {
  const double dx = (x - e.cx) / e.rx, dy = (y - e.cy) / e.ry;
  return dx * dx + dy * dy <= 1.0;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string record_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", id);
  return buf;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Splits one CSV line into numeric fields.
std::vector<double> parse_csv_numbers(const std::string& line, const std::string& file, std::size_t line_no) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    if (first == std::string::npos) throw FormatError(file + ":" + std::to_string(line_no) + ": empty field");
    const std::string trimmed = field.substr(first, last - first + 1);
    double v = 0;
    const auto [ptr, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), v);
    if (ec != std::errc() || ptr != trimmed.data() + trimmed.size())
      throw FormatError(file + ":" + std::to_string(line_no) + ": not a number '" + trimmed + "'");
    out.push_back(v);
  }
  return out;
}

// Reads a CSV keyed by image id; every row must have `width` fields including the id.
std::map<std::size_t, std::vector<double>> read_table(const fs::path& path, std::size_t width, bool required) {
  std::map<std::size_t, std::vector<double>> rows;
  std::ifstream in(path);
  if (!in) {
    if (required) throw IoError("dataset is missing " + path.string());
    return rows;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = parse_csv_numbers(line, path.string(), line_no);
    if (fields.size() != width)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " fields, got " + std::to_string(fields.size()));
    if (fields[0] < 0 || fields[0] != std::floor(fields[0]))
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad image id");
    const auto id = static_cast<std::size_t>(fields[0]);
    if (!rows.emplace(id, std::vector<double>(fields.begin() + 1, fields.end())).second)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate image id");
  }
  return rows;
}

}  // namespace

const std::vector<ClassPalette>& toy_palettes() {
  static const std::vector<ClassPalette> palettes = {
      palette("red", {0.85, 0.15, 0.15}, "black", {0.05, 0.05, 0.05}),
      palette("blue", {0.15, 0.30, 0.90}, "orange", {1.00, 0.60, 0.00}),
      palette("green", {0.15, 0.70, 0.20}, "pink", {1.00, 0.50, 0.75}),
      palette("yellow", {0.95, 0.85, 0.15}, "white", {1.00, 1.00, 1.00}),
      palette("purple", {0.60, 0.20, 0.75}, "cyan", {0.10, 0.85, 0.85}),
  };
  return palettes;
}

const std::vector<std::string>& toy_part_names() {
  static const std::vector<std::string> names = {"body", "head", "beak", "tail", "wing"};
  return names;
}

std::vector<std::string> toy_class_names() {
  std::vector<std::string> names;
  for (const auto& p : toy_palettes()) names.push_back(p.body_name);
  return names;
}

Tensor render_scene(const ToyScene& scene, std::size_t S) {
  constexpr std::size_t kSub = 4;
  // Painter's order: later parts cover earlier ones.
  constexpr ToyPart order[] = {kTail, kBody, kWing, kHead, kBeak};
  Tensor image({3, S, S});
  auto v = image.values_mut();
  for (std::size_t row = 0; row < S; ++row)
    for (std::size_t col = 0; col < S; ++col) {
      Rgb acc{0, 0, 0};
      for (std::size_t i = 0; i < kSub; ++i)
        for (std::size_t j = 0; j < kSub; ++j) {
          const double x = (col + (j + 0.5) / kSub) / S, y = (row + (i + 0.5) / kSub) / S;
          Rgb c{scene.background, scene.background, scene.background};
          for (ToyPart part : order)
            if (scene.visible[part] && inside(scene.parts[part], x, y)) c = scene.parts[part].color;
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      for (std::size_t k = 0; k < 3; ++k) v[(k * S + row) * S + col] = 2.0 * acc[k] / (kSub * kSub) - 1.0;
    }
  return image;
}

BBox scene_bbox(const ToyScene& scene) {
  double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
  for (std::size_t p = 0; p < kToyParts; ++p) {
    if (!scene.visible[p]) continue;
    const Ellipse& e = scene.parts[p];
    x0 = std::min(x0, e.cx - e.rx);
    x1 = std::max(x1, e.cx + e.rx);
    y0 = std::min(y0, e.cy - e.ry);
    y1 = std::max(y1, e.cy + e.ry);
  }
  x0 = std::clamp(x0, 0.0, 1.0);
  y0 = std::clamp(y0, 0.0, 1.0);
  x1 = std::clamp(x1, 0.0, 1.0);
  y1 = std::clamp(y1, 0.0, 1.0);
  return {x0, y0, x1 - x0, y1 - y0};
}

KeypointSet scene_keypoints(const ToyScene& scene) {
  KeypointSet kp(kToyParts);
  for (std::size_t p = 0; p < kToyParts; ++p)
    if (scene.visible[p]) kp[p] = {scene.parts[p].cx, scene.parts[p].cy, 1.0};
  return kp;
}

DatasetRecord gen_toy_scene(Rng& rng, const ToySceneSpec& spec) {
  const int class_id = static_cast<int>(rng.index(toy_palettes().size()));
  const ClassPalette& pal = toy_palettes()[static_cast<std::size_t>(class_id)];
  ToyScene scene;
  scene.background = rng.uniform(0.5, 0.65);
  scene.facing_right = !rng.bernoulli(0.5);
  while (true) {
    const double s = rng.uniform(0.9, 1.2);
    Ellipse body{rng.uniform(0.2, 0.8), rng.uniform(0.3, 0.75), s * rng.uniform(0.15, 0.19),
                 s * rng.uniform(0.10, 0.13), pal.body};
    const double head_r = s * rng.uniform(0.065, 0.08);
    Ellipse head{body.cx + 0.85 * body.rx, body.cy - 0.9 * body.ry, head_r, head_r, pal.body};
    Ellipse beak{0, 0, s * 0.07, s * 0.045, pal.beak};
    beak.cx = head.cx + head.rx + 0.5 * beak.rx;
    beak.cy = head.cy + s * rng.uniform(-0.01, 0.02);
    Ellipse tail{0, 0, s * rng.uniform(0.07, 0.09), s * 0.045, pal.shade};
    tail.cx = body.cx - body.rx - 0.6 * tail.rx;
    tail.cy = body.cy - s * rng.uniform(0.0, 0.04);
    Ellipse wing{body.cx - 0.15 * body.rx, body.cy + 0.05 * body.ry, 0.6 * body.rx, 0.55 * body.ry, pal.shade};
    scene.parts = {body, head, beak, tail, wing};
    if (!scene.facing_right)
      for (Ellipse& e : scene.parts) e.cx = 1.0 - e.cx;
    bool fits = true;
    for (const Ellipse& e : scene.parts)
      fits = fits && e.cx - e.rx >= 0.01 && e.cx + e.rx <= 0.99 && e.cy - e.ry >= 0.01 && e.cy + e.ry <= 0.99;
    if (fits) break;
  }
  DatasetRecord r;
  r.image = render_scene(scene, spec.image_size);
  r.bbox = scene_bbox(scene);
  r.keypoints = scene_keypoints(scene);
  r.class_id = class_id;
  r.captions = make_captions(scene, class_id, spec.captions_per_image, rng);
  r.scene = scene;
  return r;
}

DatasetRecord occlude_parts(const DatasetRecord& record, Rng& rng, double q) {
  if (!(q >= 0 && q < 1)) throw UsageError("occlusion probability must be in [0,1)");
  if (!record.scene) throw UsageError("occlude_parts needs a generated record with scene geometry");
  ToyScene scene = *record.scene;
  bool changed = false;
  for (std::size_t p = 0; p < kToyParts; ++p) {
    if (p == kBody || !scene.visible[p]) continue;
    if (rng.bernoulli(q)) {
      scene.visible[p] = false;
      changed = true;
    }
  }
  if (!changed) return record;
  DatasetRecord r = record;
  const std::size_t S = record.image.dim(1);
  r.scene = scene;
  r.image = render_scene(scene, S);
  r.bbox = scene_bbox(scene);
  r.keypoints = scene_keypoints(scene);
  r.captions = make_captions(scene, class_of(scene), record.captions.size(), rng);
  return r;
}

Dataset generate_toy_dataset(std::size_t count, std::uint64_t seed, const ToySceneSpec& spec, double occlusion) {
  Dataset ds;
  ds.manifest.part_names = toy_part_names();
  ds.manifest.class_names = toy_class_names();
  ds.manifest.image_size = spec.image_size;
  ds.manifest.num_records = count;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(splitmix(seed ^ splitmix(i)));
    DatasetRecord r = gen_toy_scene(rng, spec);
    if (occlusion > 0) r = occlude_parts(r, rng, occlusion);
    r.image_id = i;
    ds.records.push_back(std::move(r));
  }
  return ds;
}

nlohmann::json Manifest::to_json() const {
  return {{"part_names", part_names},
          {"class_names", class_names},
          {"image_size", image_size},
          {"num_parts", part_names.size()},
          {"num_records", num_records}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.part_names = j.at("part_names").get<std::vector<std::string>>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.image_size = j.at("image_size").get<std::size_t>();
    m.num_records = j.at("num_records").get<std::size_t>();
    if (j.contains("num_parts") && j.at("num_parts").get<std::size_t>() != m.part_names.size())
      throw FormatError("manifest: num_parts disagrees with part_names");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "captions", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
  Manifest manifest = ds.manifest;
  manifest.num_records = ds.records.size();
  std::string kp_csv, box_csv, label_csv;
  for (const DatasetRecord& r : ds.records) {
    const std::string name = record_name(r.image_id);
    write_ppm((root / "images" / (name + ".ppm")).string(), r.image);
    std::string captions;
    for (const auto& c : r.captions) captions += c + "\n";
    write_file_atomic((root / "captions" / (name + ".txt")).string(), captions);
    kp_csv += std::to_string(r.image_id);
    for (const Keypoint& k : r.keypoints) kp_csv += "," + fmt_double(k.x) + "," + fmt_double(k.y) + "," + fmt_double(k.v);
    kp_csv += "\n";
    box_csv += std::to_string(r.image_id) + "," + fmt_double(r.bbox.x0) + "," + fmt_double(r.bbox.y0) + "," +
               fmt_double(r.bbox.w) + "," + fmt_double(r.bbox.h) + "\n";
    label_csv += std::to_string(r.image_id) + "," + std::to_string(r.class_id) + "\n";
  }
  write_file_atomic((root / "keypoints.csv").string(), kp_csv);
  write_file_atomic((root / "bboxes.csv").string(), box_csv);
  write_file_atomic((root / "labels.csv").string(), label_csv);
  write_file_atomic((root / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("dataset is missing " + manifest_path.string());
  Dataset ds;
  try {
    ds.manifest = Manifest::from_json(nlohmann::json::parse(read_file(manifest_path.string())));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const std::size_t K = ds.manifest.part_names.size();
  const auto kps = read_table(root / "keypoints.csv", 1 + 3 * K, true);
  const auto boxes = read_table(root / "bboxes.csv", 5, true);
  const auto labels = read_table(root / "labels.csv", 2, false);
  if (kps.size() != ds.manifest.num_records || boxes.size() != ds.manifest.num_records)
    throw FormatError("dataset " + dir + ": manifest lists " + std::to_string(ds.manifest.num_records) +
                      " records but keypoints.csv has " + std::to_string(kps.size()) + " and bboxes.csv has " +
                      std::to_string(boxes.size()));
  for (const auto& [id, kv] : kps) {
    DatasetRecord r;
    r.image_id = id;
    const auto box = boxes.find(id);
    if (box == boxes.end()) throw FormatError("bboxes.csv has no row for image " + std::to_string(id));
    r.bbox = {box->second[0], box->second[1], box->second[2], box->second[3]};
    try {
      r.bbox.validate();
    } catch (const GeometryError& e) {
      throw FormatError("bboxes.csv, image " + std::to_string(id) + ": " + e.what());
    }
    r.keypoints.resize(K);
    for (std::size_t k = 0; k < K; ++k) r.keypoints[k] = {kv[3 * k], kv[3 * k + 1], kv[3 * k + 2]};
    try {
      validate_keypoints(r.keypoints);
    } catch (const InputError& e) {
      throw FormatError("keypoints.csv, image " + std::to_string(id) + ": " + e.what());
    }
    const std::string name = record_name(id);
    r.image = read_ppm((root / "images" / (name + ".ppm")).string());
    if (r.image.dim(1) != ds.manifest.image_size || r.image.dim(2) != ds.manifest.image_size)
      throw FormatError("image " + name + ".ppm does not match the manifest image size");
    std::stringstream captions(read_file((root / "captions" / (name + ".txt")).string()));
    for (std::string line; std::getline(captions, line);)
      if (!line.empty()) r.captions.push_back(line);
    if (r.captions.empty()) throw FormatError("captions/" + name + ".txt has no captions");
    const auto label = labels.find(id);
    r.class_id = label == labels.end() ? -1 : static_cast<int>(label->second[0]);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

bool satisfies_facing_rule(const KeypointSet& kp) {
  if (kp.size() < kToyParts) throw DimensionError("facing rule needs the toy part layout");
  for (ToyPart p : {kBody, kHead, kBeak, kTail})
    if (kp[p].v < 0.5) return false;
  const bool right = kp[kBeak].x > kp[kHead].x && kp[kTail].x < kp[kBody].x;
  const bool left = kp[kBeak].x < kp[kHead].x && kp[kTail].x > kp[kBody].x;
  return right || left;
}

std::size_t nearest_color(const Rgb& rgb, const std::vector<Rgb>& colors) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    double d = 0;
    for (int k = 0; k < 3; ++k) d += (rgb[k] - colors[i][k]) * (rgb[k] - colors[i][k]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Rgb pixel_rgb(const Tensor& image, std::size_t row, std::size_t col) {
  const std::size_t H = image.dim(1), W = image.dim(2);
  Rgb out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = (image.at((k * H + row) * W + col) + 1.0) / 2.0;
  return out;
}

}  // namespace gawwn
