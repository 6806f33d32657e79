#pragma once

// Measurable controllability probes on toy data: where the generated beak
// lands, which class hue dominates the box, and whether completed poses face
// a consistent direction.

#include <array>
#include <optional>

#include <json.hpp>

#include "gawwn/models.hpp"
#include "gawwn/toy_data.hpp"

namespace gawwn {

/// Every palette color of every class plus a mid-gray background reference.
struct ColorKey {
  std::vector<Rgb> colors;
  std::vector<int> klass;  // owning class, -1 for background
  std::vector<int> role;   // 0 body, 1 shade, 2 beak, -1 background
};
const ColorKey& toy_color_key();

/// Centroid (x, y) of the pixels whose nearest key color is the beak color of
/// `class_id`; nullopt when there is no such pixel.
std::optional<std::array<double, 2>> beak_centroid(const Tensor& image, int class_id);

/// Class whose body or shade color is nearest for the most pixels with
/// centers inside `box`; -1 when no pixel maps to a class hue.
int dominant_class_hue(const Tensor& image, const BBox& box);

struct LocationControlResult {
  std::size_t samples = 0;
  double beak_within = 0;     // fraction with a beak centroid within `radius` of the conditioned beak
  double hue_match = 0;       // fraction whose dominant box hue is the caption's class
  double mean_beak_distance = 0;  // over samples with any beak pixel
  std::vector<double> hue_match_by_class, beak_within_by_class;
  nlohmann::json to_json() const;
};

/// Conditions on the full keypoints and first caption of the first `pairs`
/// records of a held-out set, `per_pair` samples each.
LocationControlResult evaluate_location_control(const KeypointGan& model, const TextModel& text,
                                                const Dataset& heldout, std::size_t pairs, std::size_t per_pair,
                                                std::uint64_t seed, double radius = 0.15);

struct CompletionResult {
  std::size_t poses = 0;
  double facing_rate = 0;  // completed poses satisfying the dataset's facing rule
  bool in_unit_square = true;
  nlohmann::json to_json() const;
};

/// Observes only the beak, placed at the beak keypoint of each of the first
/// `positions` held-out records, with that record's first caption.
CompletionResult evaluate_completion(const KeypointCompletion& model, const TextModel& text, const Dataset& heldout,
                                     std::size_t positions, std::size_t per_position, std::uint64_t seed);

}  // namespace gawwn
