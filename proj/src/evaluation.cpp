#include "gawwn/evaluation.hpp"

#include <cmath>

namespace gawwn {

const ColorKey& toy_color_key() {
  static const ColorKey key = [] {
    ColorKey k;
    k.colors.push_back({0.575, 0.575, 0.575});
    k.klass.push_back(-1);
    k.role.push_back(-1);
    const auto& pals = toy_palettes();
    for (std::size_t c = 0; c < pals.size(); ++c) {
      for (int role = 0; role < 3; ++role) {
        k.colors.push_back(role == 0 ? pals[c].body : role == 1 ? pals[c].shade : pals[c].beak);
        k.klass.push_back(static_cast<int>(c));
        k.role.push_back(role);
      }
    }
    return k;
  }();
  return key;
}

std::optional<std::array<double, 2>> beak_centroid(const Tensor& image, int class_id) {
  const ColorKey& key = toy_color_key();
  const std::size_t S = image.dim(image.rank() - 1);
  double sx = 0, sy = 0, n = 0;
  for (std::size_t row = 0; row < S; ++row)
    for (std::size_t col = 0; col < S; ++col) {
      const std::size_t i = nearest_color(pixel_rgb(image, row, col), key.colors);
      if (key.role[i] == 2 && key.klass[i] == class_id) {
        sx += (col + 0.5) / S;
        sy += (row + 0.5) / S;
        n += 1;
      }
    }
  if (n == 0) return std::nullopt;
  return std::array<double, 2>{sx / n, sy / n};
}

int dominant_class_hue(const Tensor& image, const BBox& box) {
  const ColorKey& key = toy_color_key();
  const std::size_t S = image.dim(image.rank() - 1);
  std::vector<std::size_t> votes(toy_palettes().size(), 0);
  for (std::size_t row = 0; row < S; ++row)
    for (std::size_t col = 0; col < S; ++col) {
      if (!box.contains_center(row, col, S)) continue;
      const std::size_t i = nearest_color(pixel_rgb(image, row, col), key.colors);
      if (key.role[i] == 0 || key.role[i] == 1) ++votes[static_cast<std::size_t>(key.klass[i])];
    }
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c)
    if (votes[c] > votes[best]) best = c;
  return votes[best] == 0 ? -1 : static_cast<int>(best);
}

nlohmann::json LocationControlResult::to_json() const {
  return {{"samples", samples},
          {"beak_within", beak_within},
          {"hue_match", hue_match},
          {"mean_beak_distance", mean_beak_distance},
          {"beak_within_by_class", beak_within_by_class},
          {"hue_match_by_class", hue_match_by_class}};
}

LocationControlResult evaluate_location_control(const KeypointGan& model, const TextModel& text,
                                                const Dataset& heldout, std::size_t pairs, std::size_t per_pair,
                                                std::uint64_t seed, double radius) {
  if (pairs == 0 || per_pair == 0 || pairs > heldout.records.size())
    throw UsageError("location control needs 1.." + std::to_string(heldout.records.size()) + " pairs");
  const NetConfig& cfg = model.config;
  NoGradGuard no_grad;
  Rng rng(seed);
  LocationControlResult r;
  std::size_t within = 0, hue = 0, located = 0;
  double dist_sum = 0;
  const std::size_t classes = toy_palettes().size();
  std::vector<double> class_n(classes, 0), class_hue(classes, 0), class_beak(classes, 0);
  for (std::size_t p = 0; p < pairs; ++p) {
    const DatasetRecord& rec = heldout.records[p];
    const std::vector<std::string> caption{rec.captions.front()};
    const Tensor t = replicate_rows(reshape(text.embed(caption), {text.text_config.embed_dim}), per_pair);
    const std::vector<KeypointSet> kps(per_pair, rec.keypoints);
    const Tensor z = rng.normal_tensor({per_pair, cfg.z_dim});
    const Tensor images = model.G(z, t, keypoints_to_grid(kps, cfg.grid), false).image;
    const std::size_t S = cfg.image_size, P = 3 * S * S;
    for (std::size_t i = 0; i < per_pair; ++i) {
      const Tensor img({3, S, S}, std::vector<double>(images.values().begin() + i * P, images.values().begin() + (i + 1) * P));
      ++r.samples;
      if (const auto c = beak_centroid(img, rec.class_id)) {
        const double d = std::hypot((*c)[0] - rec.keypoints[kBeak].x, (*c)[1] - rec.keypoints[kBeak].y);
        dist_sum += d;
        ++located;
        if (d <= radius) {
          ++within;
          if (rec.class_id >= 0) class_beak[static_cast<std::size_t>(rec.class_id)] += 1;
        }
      }
      const bool match = dominant_class_hue(img, rec.bbox) == rec.class_id;
      hue += match;
      if (rec.class_id >= 0) {
        class_n[static_cast<std::size_t>(rec.class_id)] += 1;
        class_hue[static_cast<std::size_t>(rec.class_id)] += match;
      }
    }
  }
  r.beak_within = static_cast<double>(within) / static_cast<double>(r.samples);
  r.hue_match = static_cast<double>(hue) / static_cast<double>(r.samples);
  r.mean_beak_distance = located ? dist_sum / static_cast<double>(located) : 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    r.hue_match_by_class.push_back(class_n[c] > 0 ? class_hue[c] / class_n[c] : 0.0);
    r.beak_within_by_class.push_back(class_n[c] > 0 ? class_beak[c] / class_n[c] : 0.0);
  }
  return r;
}

nlohmann::json CompletionResult::to_json() const {
  return {{"poses", poses}, {"facing_rate", facing_rate}, {"in_unit_square", in_unit_square}};
}

CompletionResult evaluate_completion(const KeypointCompletion& model, const TextModel& text, const Dataset& heldout,
                                     std::size_t positions, std::size_t per_position, std::uint64_t seed) {
  if (positions == 0 || per_position == 0 || positions > heldout.records.size())
    throw UsageError("completion check needs 1.." + std::to_string(heldout.records.size()) + " positions");
  const std::size_t K = model.config.num_parts;
  if (K != kToyParts) throw UsageError("the facing rule is defined for the toy part set");
  NoGradGuard no_grad;
  Rng rng(seed);
  CompletionResult r;
  std::size_t facing = 0;
  for (std::size_t p = 0; p < positions; ++p) {
    const DatasetRecord& rec = heldout.records[p];
    KeypointSet observed(K);
    observed[kBeak] = rec.keypoints[kBeak];
    SwitchVector s(K, 0);
    s[kBeak] = 1;
    const std::vector<KeypointSet> kp_rows(per_position, observed);
    const std::vector<SwitchVector> s_rows(per_position, s);
    const std::vector<std::string> caption{rec.captions.front()};
    const Tensor t = replicate_rows(reshape(text.embed(caption), {text.text_config.embed_dim}), per_position);
    const Tensor z = rng.normal_tensor({per_position, model.config.z_dim});
    const Tensor out = model.G(z, t, keypoints_to_tensor(kp_rows), switches_to_tensor(s_rows));
    for (double v : out.values()) r.in_unit_square = r.in_unit_square && v >= 0 && v <= 1;
    for (std::size_t i = 0; i < per_position; ++i) {
      const KeypointSet kp = keypoints_from_row(out, i, observed, s);
      ++r.poses;
      if (satisfies_facing_rule(kp)) ++facing;
    }
  }
  r.facing_rate = static_cast<double>(facing) / static_cast<double>(r.poses);
  return r;
}

}  // namespace gawwn
