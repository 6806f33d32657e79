#pragma once

// Character-level caption encoder (char-CNN followed by a GRU), the image
// encoder it is paired with, and the class-structured ranking loss that
// trains both into one embedding space.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gawwn/layers.hpp"

namespace gawwn {

inline constexpr std::size_t kAlphabetSize = 70;
inline constexpr std::size_t kCaptionLength = 201;

/// Alphabet position of one code point, or -1 when it is not in the alphabet.
/// Upper-case ASCII letters map onto their lower-case symbol.
int alphabet_index(char32_t code_point);

/// UTF-8 caption -> kCaptionLength symbol ids, padded with -1 and truncated.
/// Throws InputError on invalid UTF-8 or a character outside the alphabet.
std::vector<int> caption_to_ids(std::string_view utf8);

struct TextEncoderConfig {
  std::size_t embed_dim = 64;  // T
  std::size_t conv1_filters = 32;
  std::size_t conv1_width = 4;
  std::size_t conv2_filters = 32;
  std::size_t conv2_width = 3;
  std::size_t pool = 3;
  std::size_t gru_hidden = 64;
};

class TextEncoder {
 public:
  TextEncoder(ParamStore& store, const TextEncoderConfig& config, Rng& rng);

  /// [B, T] embeddings of B captions.
  Tensor encode(std::span<const std::string> captions) const;
  /// Same from pre-converted ids (B * kCaptionLength entries).
  Tensor encode_ids(std::span<const int> ids, std::size_t batch) const;

  std::size_t embed_dim() const { return config_.embed_dim; }

 private:
  TextEncoderConfig config_;
  Tensor char_weight_, char_bias_;
  Conv2d conv2_;
  Tensor conv2_bias_;
  Linear gru_input_;  // x -> [r z n] pre-activations, biases included
  Tensor gru_hidden_;  // h -> [r z n], [H, 3H]
  Linear project_;
};

/// phi: small strided conv stack over [N,3,S,S] images in [-1,1] -> [N,T].
class ImageEncoder {
 public:
  ImageEncoder(ParamStore& store, std::size_t image_size, std::size_t embed_dim, Rng& rng);
  Tensor operator()(const Tensor& images) const;

 private:
  std::vector<Conv2d> convs_;
  std::vector<Tensor> biases_;
  Linear project_;
  std::size_t image_size_;
};

/// Parameters of both encoders under one "txt" namespace.
struct JointEmbeddingModel {
  JointEmbeddingModel(const TextEncoderConfig& config, std::size_t image_size, Rng& rng);
  JointEmbeddingModel(const JointEmbeddingModel&) = delete;
  JointEmbeddingModel& operator=(const JointEmbeddingModel&) = delete;

  ParamStore store{"txt"};
  TextEncoder text;
  ImageEncoder image;
};

/// Inner product of two equal-length vectors.
double compatibility(const Tensor& image_embedding, const Tensor& text_embedding);

/// Symmetric hinge ranking loss with margin 1. For every image the compatibility
/// with the mean text embedding of its own class must beat every other class
/// present in the batch by the margin, and likewise for every text against the
/// per-class mean image embeddings. Averaged over the batch.
/// image_emb and text_emb are [N,T]; labels has N entries with at least two
/// distinct values.
Tensor joint_embedding_loss(const Tensor& image_emb, const Tensor& text_emb, std::span<const int> labels);

/// argmax over classes of the mean compatibility between each query row and
/// the pool of that class; ties go to the lowest class id. Pools are [n_c, T].
std::vector<int> classify_by_compatibility(const Tensor& queries, std::span<const Tensor> class_pools);

/// Arithmetic mean of a non-empty list of equal-length embeddings.
Tensor average_caption_embeddings(std::span<const Tensor> embeddings);

}  // namespace gawwn
