#pragma once

// Procedural "toy bird" scenes with exact keypoints, boxes and captions, and
// the on-disk dataset layout shared with externally converted data:
//
//   manifest.json        part/class names, image size, record count
//   images/NNNN.ppm      binary P6
//   keypoints.csv        image_id, then K triples x,y,v
//   bboxes.csv           image_id,x0,y0,w,h
//   labels.csv           image_id,class_id   (optional; -1 when absent)
//   captions/NNNN.txt    one caption per line

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gawwn/keypoints.hpp"
#include "gawwn/rng.hpp"
#include "gawwn/spatial.hpp"

namespace gawwn {

// Part order used for keypoints, grids and channels.
enum ToyPart : std::size_t { kBody = 0, kHead = 1, kBeak = 2, kTail = 3, kWing = 4, kToyParts = 5 };

using Rgb = std::array<double, 3>;

struct ClassPalette {
  std::string body_name, shade_name, beak_name;
  Rgb body, shade, beak;
};

/// The five class palettes; body, shade and beak colors are all distinct across classes.
const std::vector<ClassPalette>& toy_palettes();
const std::vector<std::string>& toy_part_names();
std::vector<std::string> toy_class_names();

/// Axis-aligned ellipse in normalized image coordinates.
struct Ellipse {
  double cx = 0, cy = 0, rx = 0, ry = 0;
  Rgb color{};
};

/// Geometry needed to re-render a scene after occluding parts.
struct ToyScene {
  std::array<Ellipse, kToyParts> parts;
  std::array<bool, kToyParts> visible{true, true, true, true, true};
  double background = 0.55;
  bool facing_right = true;
};

struct ToySceneSpec {
  std::size_t image_size = 32;
  std::size_t captions_per_image = 5;
};

struct DatasetRecord {
  std::size_t image_id = 0;
  Tensor image;  // [3,S,S] in [-1,1]
  BBox bbox;
  KeypointSet keypoints;
  std::vector<std::string> captions;
  int class_id = -1;
  std::optional<ToyScene> scene;  // only for generated records
};

struct Manifest {
  std::vector<std::string> part_names;
  std::vector<std::string> class_names;
  std::size_t image_size = 0;
  std::size_t num_records = 0;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

struct Dataset {
  Manifest manifest;
  std::vector<DatasetRecord> records;
};

DatasetRecord gen_toy_scene(Rng& rng, const ToySceneSpec& spec);

/// Each non-body part independently disappears with probability q; the image,
/// box and captions are regenerated to match. Needs a generated record.
DatasetRecord occlude_parts(const DatasetRecord& record, Rng& rng, double q);

/// Deterministic in (count, seed, spec); record i depends only on (seed, i).
Dataset generate_toy_dataset(std::size_t count, std::uint64_t seed, const ToySceneSpec& spec = {},
                             double occlusion = 0.0);

void write_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

/// Renders a scene at resolution S (anti-aliased by 4x4 supersampling).
Tensor render_scene(const ToyScene& scene, std::size_t image_size);
/// Union of visible part extents, clamped to the unit square.
BBox scene_bbox(const ToyScene& scene);
KeypointSet scene_keypoints(const ToyScene& scene);

/// True when beak and tail sit on opposite sides consistently with head and
/// body: (beak.x > head.x and tail.x < body.x) or the mirror image.
/// Requires body, head, beak and tail to be present.
bool satisfies_facing_rule(const KeypointSet& kp);

/// Index into `colors` of the entry closest (Euclidean) to `rgb`.
std::size_t nearest_color(const Rgb& rgb, const std::vector<Rgb>& colors);
/// Pixel (row, col) of a [3,S,S] image in [-1,1] as an RGB triple in [0,1].
Rgb pixel_rgb(const Tensor& image, std::size_t row, std::size_t col);

}  // namespace gawwn
