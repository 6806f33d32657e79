#include "gawwn/text_embedding.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gawwn {

namespace {

// 26 letters, 10 digits, space, the 32 ASCII punctuation marks and the
// typographic apostrophe U+2019.
constexpr std::string_view kAsciiSymbols =
    "abcdefghijklmnopqrstuvwxyz0123456789 !\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
constexpr char32_t kRightQuote = 0x2019;

static_assert(kAsciiSymbols.size() + 1 == kAlphabetSize);

// Decodes one UTF-8 sequence starting at pos; throws on malformed input.
char32_t next_code_point(std::string_view s, std::size_t& pos) {
  const auto lead = static_cast<unsigned char>(s[pos]);
  std::size_t extra = 0;
  char32_t cp = 0;
  if (lead < 0x80) {
    cp = lead;
  } else if ((lead & 0xE0) == 0xC0) {
    cp = lead & 0x1F;
    extra = 1;
  } else if ((lead & 0xF0) == 0xE0) {
    cp = lead & 0x0F;
    extra = 2;
  } else if ((lead & 0xF8) == 0xF0) {
    cp = lead & 0x07;
    extra = 3;
  } else {
    throw InputError("caption is not valid UTF-8 at byte " + std::to_string(pos));
  }
  for (std::size_t i = 1; i <= extra; ++i) {
    if (pos + i >= s.size()) throw InputError("truncated UTF-8 sequence at byte " + std::to_string(pos));
    const auto c = static_cast<unsigned char>(s[pos + i]);
    if ((c & 0xC0) != 0x80) throw InputError("caption is not valid UTF-8 at byte " + std::to_string(pos + i));
    cp = (cp << 6) | (c & 0x3F);
  }
  pos += extra + 1;
  return cp;
}

Tensor gru_gate(const Tensor& pre, std::size_t gate, std::size_t hidden) {
  return slice(pre, 1, gate * hidden, hidden);
}

}  // namespace

int alphabet_index(char32_t cp) {
  if (cp == kRightQuote) return static_cast<int>(kAlphabetSize - 1);
  if (cp >= 'A' && cp <= 'Z') cp = cp - 'A' + 'a';
  if (cp >= 0x80) return -1;
  const auto at = kAsciiSymbols.find(static_cast<char>(cp));
  return at == std::string_view::npos ? -1 : static_cast<int>(at);
}

std::vector<int> caption_to_ids(std::string_view utf8) {
  std::vector<int> ids;
  ids.reserve(kCaptionLength);
  std::size_t pos = 0;
  while (pos < utf8.size()) {
    const std::size_t start = pos;
    const char32_t cp = next_code_point(utf8, pos);
    const int id = alphabet_index(cp);
    if (id < 0)
      throw InputError("caption character at byte " + std::to_string(start) + " is outside the alphabet");
    if (ids.size() < kCaptionLength) ids.push_back(id);
  }
  ids.resize(kCaptionLength, -1);
  return ids;
}

TextEncoder::TextEncoder(ParamStore& store, const TextEncoderConfig& config, Rng& rng) : config_(config) {
  const auto& c = config_;
  char_weight_ = store.add_param("char_conv/weight",
                                 rng.normal_tensor({c.conv1_filters, kAlphabetSize, c.conv1_width},
                                                   std::sqrt(2.0 / c.conv1_width)));
  char_bias_ = store.add_param("char_conv/bias", Tensor({c.conv1_filters}));
  conv2_ = {store.add_param("conv2/weight",
                            rng.normal_tensor({c.conv2_filters, c.conv1_filters, 1, c.conv2_width},
                                              std::sqrt(2.0 / (c.conv1_filters * c.conv2_width)))),
            1, 0};
  conv2_bias_ = store.add_param("conv2/bias", Tensor({c.conv2_filters}));
  gru_input_ = make_linear(store, "gru/input", c.conv2_filters, 3 * c.gru_hidden, rng,
                           1.0 / std::sqrt(static_cast<double>(c.conv2_filters)));
  gru_hidden_ = store.add_param("gru/hidden", rng.normal_tensor({c.gru_hidden, 3 * c.gru_hidden},
                                                                1.0 / std::sqrt(static_cast<double>(c.gru_hidden))));
  project_ = make_linear(store, "project", c.gru_hidden, c.embed_dim, rng,
                         1.0 / std::sqrt(static_cast<double>(c.gru_hidden)));
}

Tensor TextEncoder::encode(std::span<const std::string> captions) const {
  if (captions.empty()) throw UsageError("encode: no captions");
  std::vector<int> ids;
  ids.reserve(captions.size() * kCaptionLength);
  for (const auto& caption : captions) {
    auto one = caption_to_ids(caption);
    ids.insert(ids.end(), one.begin(), one.end());
  }
  return encode_ids(ids, captions.size());
}

Tensor TextEncoder::encode_ids(std::span<const int> ids, std::size_t batch) const {
  const auto& c = config_;
  const std::size_t H = c.gru_hidden;
  Tensor x = relu(char_conv1d(ids, batch, kCaptionLength, char_weight_, char_bias_));
  x = max_pool2d(x, 1, c.pool);
  x = relu(add_channel_bias(conv2_(x), conv2_bias_));
  x = max_pool2d(x, 1, c.pool);  // [B, F, 1, steps]
  const std::size_t F = x.dim(1), steps = x.dim(3);

  // Input contributions for every step at once: [B*steps, 3H].
  Tensor seq = reshape(permute(x, {0, 2, 3, 1}), {batch * steps, F});
  Tensor xin = reshape(gru_input_(seq), {batch, steps, 3 * H});

  // Step t first sees character pool*pool*t, so steps past that are pure
  // padding. Each caption's recurrence stops at its own last real step and
  // the final hidden state is taken there.
  std::vector<std::size_t> active(batch, 1);
  std::size_t longest = 1;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t len = 0;
    while (len < kCaptionLength && ids[b * kCaptionLength + len] >= 0) ++len;
    active[b] = std::clamp<std::size_t>((len + c.pool * c.pool - 1) / (c.pool * c.pool), 1, steps);
    longest = std::max(longest, active[b]);
  }

  Tensor h({batch, H});
  for (std::size_t t = 0; t < longest; ++t) {
    Tensor xt = reshape(slice(xin, 1, t, 1), {batch, 3 * H});
    Tensor hh = matmul(h, gru_hidden_);
    Tensor r = sigmoid(add(gru_gate(xt, 0, H), gru_gate(hh, 0, H)));
    Tensor z = sigmoid(add(gru_gate(xt, 1, H), gru_gate(hh, 1, H)));
    Tensor n = tanh(add(gru_gate(xt, 2, H), mul(r, gru_gate(hh, 2, H))));
    Tensor next = add(mul(one_minus(z), n), mul(z, h));
    if (std::all_of(active.begin(), active.end(), [t](std::size_t a) { return a > t; })) {
      h = next;
      continue;
    }
    Tensor keep({batch, H});
    auto kv = keep.values_mut();
    for (std::size_t b = 0; b < batch; ++b)
      if (active[b] <= t) std::fill(kv.begin() + b * H, kv.begin() + (b + 1) * H, 1.0);
    h = add(mul(one_minus(keep), next), mul(keep, h));
  }
  return project_(h);
}

ImageEncoder::ImageEncoder(ParamStore& store, std::size_t image_size, std::size_t embed_dim, Rng& rng)
    : image_size_(image_size) {
  if (image_size < 8 || image_size % 8 != 0) throw DimensionError("image encoder needs a multiple of 8");
  const std::size_t widths[] = {3, 16, 32, 32};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "image/conv" + std::to_string(i + 1);
    convs_.push_back(make_conv(store, name, widths[i], widths[i + 1], 4, 2, 1, rng,
                               std::sqrt(2.0 / (16.0 * widths[i]))));
    biases_.push_back(store.add_param(name + "/bias", Tensor({widths[i + 1]})));
  }
  const std::size_t side = image_size / 8;
  project_ = make_linear(store, "image/project", 32 * side * side, embed_dim, rng,
                         1.0 / std::sqrt(32.0 * side * side));
}

Tensor ImageEncoder::operator()(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != image_size_ || images.dim(3) != image_size_)
    throw DimensionError("image encoder expects [N,3," + std::to_string(image_size_) + "," +
                         std::to_string(image_size_) + "], got " + shape_str(images.shape()));
  Tensor x = images;
  for (std::size_t i = 0; i < convs_.size(); ++i) x = leaky_relu(add_channel_bias(convs_[i](x), biases_[i]), 0.2);
  return project_(reshape(x, {x.dim(0), x.numel() / x.dim(0)}));
}

JointEmbeddingModel::JointEmbeddingModel(const TextEncoderConfig& config, std::size_t image_size, Rng& rng)
    : text(store, config, rng), image(store, image_size, config.embed_dim, rng) {}

double compatibility(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw DimensionError("compatibility: lengths " + std::to_string(a.numel()) + " and " +
                         std::to_string(b.numel()) + " differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
  return s;
}

Tensor joint_embedding_loss(const Tensor& image_emb, const Tensor& text_emb, std::span<const int> labels) {
  if (image_emb.rank() != 2 || image_emb.shape() != text_emb.shape())
    throw DimensionError("joint_embedding_loss: embeddings must both be [N,T]");
  const std::size_t N = image_emb.dim(0);
  if (labels.size() != N) throw DimensionError("joint_embedding_loss: one label per row required");
  const std::vector<int> classes = [&] {
    std::set<int> s(labels.begin(), labels.end());
    return std::vector<int>(s.begin(), s.end());
  }();
  if (classes.size() < 2) throw UsageError("joint_embedding_loss: batch needs at least two classes");
  const std::size_t C = classes.size();

  // Averaging matrix A [N,C] (column c averages the rows of class c) and the
  // one-hot of each row's own class.
  Tensor avg({N, C}), own({N, C});
  for (std::size_t c = 0; c < C; ++c) {
    const auto count = static_cast<double>(std::count(labels.begin(), labels.end(), classes[c]));
    for (std::size_t i = 0; i < N; ++i)
      if (labels[i] == classes[c]) {
        avg.values_mut()[i * C + c] = 1.0 / count;
        own.values_mut()[i * C + c] = 1.0;
      }
  }
  const Tensor ones_col = Tensor::full({C, 1}, 1.0), ones_row = Tensor::full({1, C}, 1.0);
  const Tensor others = one_minus(own);

  auto ranking = [&](const Tensor& queries, const Tensor& pool) {
    Tensor scores = matmul(matmul(queries, transpose(pool)), avg);        // [N,C] class-mean compatibility
    Tensor matched = matmul(matmul(mul(scores, own), ones_col), ones_row);  // own-class score in every column
    return sum(mul(relu(add_scalar(sub(scores, matched), 1.0)), others));
  };
  Tensor total = add(ranking(image_emb, text_emb), ranking(text_emb, image_emb));
  return scale(total, 1.0 / static_cast<double>(N));
}

std::vector<int> classify_by_compatibility(const Tensor& queries, std::span<const Tensor> class_pools) {
  if (class_pools.empty()) throw UsageError("classify: no classes");
  const Tensor q = queries.rank() == 1 ? reshape(queries, {1, queries.dim(0)}) : queries;
  const std::size_t T = q.dim(1);
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < class_pools.size(); ++c) {
    const Tensor& pool = class_pools[c];
    if (!pool.defined()) throw UsageError("classify: class " + std::to_string(c) + " has an empty pool");
    if (pool.numel() % T != 0) throw DimensionError("classify: pool width mismatch");
    const std::size_t n = pool.numel() / T;
    std::vector<double> m(T, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < T; ++k) m[k] += pool.at(i * T + k) / static_cast<double>(n);
    means.push_back(std::move(m));
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < q.dim(0); ++i) {
    int best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < means.size(); ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < T; ++k) s += q.at(i * T + k) * means[c][k];
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(c);
      }
    }
    out.push_back(best);
  }
  return out;
}

Tensor average_caption_embeddings(std::span<const Tensor> embeddings) {
  if (embeddings.empty()) throw UsageError("average_caption_embeddings: empty list");
  for (const auto& e : embeddings)
    if (e.shape() != embeddings[0].shape()) throw DimensionError("average_caption_embeddings: shape mismatch");
  Tensor acc = embeddings[0];
  for (std::size_t i = 1; i < embeddings.size(); ++i) acc = add(acc, embeddings[i]);
  return scale(acc, 1.0 / static_cast<double>(embeddings.size()));
}

}  // namespace gawwn
