#include "gawwn/nets.hpp"

#include <cmath>
#include <string>

namespace gawwn {

namespace {

constexpr double kInitStd = 0.02;

std::size_t log2_exact(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return (std::size_t{1} << k) == n ? k : static_cast<std::size_t>(-1);
}

Tensor activate(const Tensor& x, Act act) {
  switch (act) {
    case Act::relu: return relu(x);
    case Act::lrelu: return leaky_relu(x, 0.2);
    case Act::tanh: return tanh(x);
    case Act::none: break;
  }
  return x;
}

Block make_block(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                 std::size_t stride, std::size_t pad, bool transposed, bool bn, Act act, Rng& rng) {
  Block b;
  b.transposed = transposed;
  b.stride = stride;
  b.pad = pad;
  b.weight = store.add_param(name + "/weight", transposed ? rng.normal_tensor({in, out, kernel, kernel}, kInitStd)
                                                          : rng.normal_tensor({out, in, kernel, kernel}, kInitStd));
  b.has_bn = bn;
  if (bn)
    b.bn = make_batch_norm(store, name + "/bn", out, rng);
  else
    b.bias = store.add_param(name + "/bias", Tensor({out}));
  b.act = act;
  return b;
}

Tensor run(const std::vector<Block>& blocks, Tensor x, bool training) {
  for (const Block& b : blocks) x = b(x, training);
  return x;
}

// Deconvolution stack from a 1x1 vector to M x M with `out` channels.
std::vector<Block> generator_path(ParamStore& store, const std::string& name, std::size_t in,
                                  const NetConfig& c, Rng& rng) {
  const std::size_t stages = log2_exact(c.grid) - 2;  // stride-2 steps after the first 1 -> 4 deconv
  auto width = [&](std::size_t j) { return j == stages ? c.hidden : c.path_base << (stages - 1 - j); };
  std::vector<Block> blocks;
  blocks.push_back(make_block(store, name + "/deconv0", in, width(0), 4, 1, 0, true, true, Act::relu, rng));
  for (std::size_t j = 1; j <= stages; ++j)
    blocks.push_back(make_block(store, name + "/deconv" + std::to_string(j), width(j - 1), width(j), 4, 2, 1,
                                true, true, Act::relu, rng));
  return blocks;
}

// Deconvolutions from the merged M x M tensor to the S x S image.
std::vector<Block> generator_post(ParamStore& store, std::size_t in, const NetConfig& c, Rng& rng) {
  const std::size_t stages = log2_exact(c.image_size / c.grid);
  std::vector<Block> blocks;
  std::size_t width = in;
  for (std::size_t j = 0; j + 1 < stages; ++j) {
    const std::size_t out = c.post_base << (stages - 2 - j);
    blocks.push_back(make_block(store, "post/deconv" + std::to_string(j), width, out, 4, 2, 1, true, true,
                                Act::relu, rng));
    width = out;
  }
  blocks.push_back(make_block(store, "post/deconv" + std::to_string(stages - 1), width, 3, 4, 2, 1, true, false,
                              Act::tanh, rng));
  return blocks;
}

// Stride-2 convolutions; the first layer sees raw pixels and skips batch norm.
std::vector<Block> downsample(ParamStore& store, const std::string& name, std::size_t in, std::size_t count,
                              std::size_t first_width, bool first_is_input, Rng& rng) {
  std::vector<Block> blocks;
  std::size_t width = in;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t out = first_width << i;
    const bool bn = !(first_is_input && i == 0);
    blocks.push_back(
        make_block(store, name + "/conv" + std::to_string(i), width, out, 4, 2, 1, false, bn, Act::lrelu, rng));
    width = out;
  }
  return blocks;
}

// 4x4 -> 1x1 valid convolution producing a pathway vector (activation deferred to the merge).
Block to_vector(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return make_block(store, name, in, out, 4, 1, 0, false, false, Act::none, rng);
}

std::size_t last_width(const std::vector<Block>& blocks, std::size_t fallback) {
  if (blocks.empty()) return fallback;
  const Block& b = blocks.back();
  return b.transposed ? b.weight.dim(1) : b.weight.dim(0);
}

Tensor flatten(const Tensor& x) { return reshape(x, {x.dim(0), x.numel() / x.dim(0)}); }

void check_images(const Tensor& images, const NetConfig& c, const char* who) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != c.image_size || images.dim(3) != c.image_size)
    throw DimensionError(std::string(who) + ": images must be [N,3," + std::to_string(c.image_size) + "," +
                         std::to_string(c.image_size) + "], got " + shape_str(images.shape()));
}

void check_text(const Tensor& t, std::size_t batch, const NetConfig& c, const char* who) {
  if (t.rank() != 2 || t.dim(0) != batch || t.dim(1) != c.text_dim)
    throw DimensionError(std::string(who) + ": text embedding must be [" + std::to_string(batch) + "," +
                         std::to_string(c.text_dim) + "], got " + shape_str(t.shape()));
}

void check_noise(const Tensor& z, const NetConfig& c, const char* who) {
  if (z.rank() != 2 || z.dim(1) != c.z_dim)
    throw DimensionError(std::string(who) + ": noise must be [N," + std::to_string(c.z_dim) + "], got " +
                         shape_str(z.shape()));
}

void check_grid(const Tensor& grid, std::size_t batch, const NetConfig& c, const char* who) {
  if (grid.rank() != 4 || grid.dim(0) != batch || grid.dim(1) != c.parts || grid.dim(2) != c.grid ||
      grid.dim(3) != c.grid)
    throw DimensionError(std::string(who) + ": keypoint grid must be [N," + std::to_string(c.parts) + "," +
                         std::to_string(c.grid) + "," + std::to_string(c.grid) + "], got " +
                         shape_str(grid.shape()));
}

}  // namespace

NetConfig NetConfig::full() {
  NetConfig c;
  c.z_dim = 100;
  c.text_dim = 1024;
  c.grid = 16;
  c.parts = 15;
  c.hidden = 128;
  c.image_size = 128;
  c.path_base = 256;
  c.post_base = 64;
  c.disc_base = 64;
  c.disc_vec = 256;
  c.kp_vec = 128;
  c.loc_vec = 256;
  return c;
}

void NetConfig::validate() const {
  const std::size_t lg = log2_exact(grid);
  if (lg == static_cast<std::size_t>(-1) || grid < 8) throw DimensionError("grid M must be a power of two >= 8");
  if (image_size % grid != 0 || image_size / grid < 2 ||
      log2_exact(image_size / grid) == static_cast<std::size_t>(-1))
    throw DimensionError("image size must be M times a power of two >= 2");
  for (std::size_t v : {z_dim, text_dim, parts, hidden, path_base, post_base, disc_base, disc_vec, kp_vec, loc_vec})
    if (v == 0) throw DimensionError("network widths must be positive");
}

nlohmann::json NetConfig::to_json() const {
  return {{"z_dim", z_dim},         {"text_dim", text_dim},   {"grid", grid},           {"parts", parts},
          {"hidden", hidden},       {"image_size", image_size}, {"path_base", path_base}, {"post_base", post_base},
          {"disc_base", disc_base}, {"disc_vec", disc_vec},   {"kp_vec", kp_vec},       {"loc_vec", loc_vec}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  auto read = [&](const char* key, std::size_t& field) {
    if (j.contains(key)) field = j.at(key).get<std::size_t>();
  };
  read("z_dim", c.z_dim);
  read("text_dim", c.text_dim);
  read("grid", c.grid);
  read("parts", c.parts);
  read("hidden", c.hidden);
  read("image_size", c.image_size);
  read("path_base", c.path_base);
  read("post_base", c.post_base);
  read("disc_base", c.disc_base);
  read("disc_vec", c.disc_vec);
  read("kp_vec", c.kp_vec);
  read("loc_vec", c.loc_vec);
  c.validate();
  return c;
}

Tensor Block::operator()(const Tensor& x, bool training) const {
  Tensor y = transposed ? deconv2d(x, weight, stride, pad) : conv2d(x, weight, stride, pad);
  if (has_bn) {
    BatchNormBuffers buffers = bn.buffers;  // handles share the running statistics
    y = batch_norm(y, bn.gamma, bn.beta, buffers, training);
  } else {
    y = add_channel_bias(y, bias);
  }
  return activate(y, act);
}

// ---- box-conditional ------------------------------------------------------

BBoxGenerator::BBoxGenerator(ParamStore& store, const NetConfig& c, Rng& rng) : config_(c) {
  c.validate();
  // Conv + 2x mean-pool stages take the warped text map from M x M to 1 x 1.
  const std::size_t stages = log2_exact(c.grid);
  std::size_t width = c.text_dim;
  for (std::size_t i = 0; i < stages; ++i) {
    const std::size_t out = i + 1 == stages ? c.loc_vec : std::min(c.loc_vec, std::size_t{32} << i);
    box_encoder_.push_back(make_block(store, "box/conv" + std::to_string(i), width, out, 3, 1, 1, false, true,
                                      Act::relu, rng));
    width = out;
  }
  global_ = generator_path(store, "global", c.z_dim + c.loc_vec, c, rng);
  local_ = generator_path(store, "local", c.z_dim + c.loc_vec, c, rng);
  post_ = generator_post(store, 2 * c.hidden, c, rng);
}

GeneratorOutput BBoxGenerator::operator()(const Tensor& z, const Tensor& t, std::span<const BBox> boxes,
                                          bool training) const {
  const NetConfig& c = config_;
  check_noise(z, c, "bbox generator");
  const std::size_t N = z.dim(0);
  check_text(t, N, c, "bbox generator");
  if (boxes.size() != N) throw DimensionError("bbox generator: one box per sample required");

  Tensor where = warp_into_bbox(replicate_spatial(t, c.grid), boxes);  // [N,T,M,M], zero outside the box
  for (const Block& b : box_encoder_) where = mean_pool(b(where, training), 2, 2);
  const Tensor vec = reshape(concat({z, flatten(where)}, 1), {N, c.z_dim + c.loc_vec, 1, 1});

  const Tensor global = run(global_, vec, training);
  const Tensor local = mask_outside_bbox(run(local_, vec, training), boxes);
  GeneratorOutput out;
  out.local_probe = local;
  out.mask = bbox_mask(boxes, c.grid);
  out.image = run(post_, concat_depth({local, global}), training);
  return out;
}

BBoxDiscriminator::BBoxDiscriminator(ParamStore& store, const NetConfig& c, Rng& rng) : config_(c) {
  c.validate();
  const std::size_t S = c.image_size, M = c.grid;
  global_ = downsample(store, "global", 3, log2_exact(S) - 2, c.disc_base, true, rng);
  global_.push_back(to_vector(store, "global/vector", last_width(global_, 3), c.disc_vec, rng));
  local_down_ = downsample(store, "local", 3, log2_exact(S / M), c.disc_base, true, rng);
  // After the text concat and the crop to M/2: stride-2 convs down to 4x4, then to a vector.
  const std::size_t in = last_width(local_down_, 3) + c.text_dim;
  local_after_ = downsample(store, "local/crop", in, log2_exact(M / 2) - 2, c.disc_base << log2_exact(S / M), false, rng);
  local_after_.push_back(to_vector(store, "local/vector", last_width(local_after_, in), c.disc_vec, rng));
  text_proj_ = make_linear(store, "text_proj", c.text_dim, c.disc_vec, rng, kInitStd);
  out_ = make_linear(store, "out", c.disc_vec, 1, rng, kInitStd);
}

Tensor BBoxDiscriminator::operator()(const Tensor& images, const Tensor& t, std::span<const BBox> boxes,
                                     bool training) const {
  const NetConfig& c = config_;
  check_images(images, c, "bbox discriminator");
  const std::size_t N = images.dim(0);
  check_text(t, N, c, "bbox discriminator");
  if (boxes.size() != N) throw DimensionError("bbox discriminator: one box per sample required");

  const Tensor global = add(flatten(run(global_, images, training)), text_proj_(t));
  Tensor local = concat_depth({run(local_down_, images, training), replicate_spatial(t, c.grid)});
  local = crop_to_bbox(local, boxes, c.grid / 2);
  local = flatten(run(local_after_, local, training));
  return out_(leaky_relu(add(global, local), 0.2));
}

// ---- keypoint-conditional -------------------------------------------------

KeypointImageGenerator::KeypointImageGenerator(ParamStore& store, const NetConfig& c, Rng& rng) : config_(c) {
  c.validate();
  // Stride-2 convolutions take the keypoint tensor from M x M to a vector.
  const std::size_t stages = log2_exact(c.grid);
  std::size_t width = c.parts;
  for (std::size_t i = 0; i < stages; ++i) {
    const std::size_t out = i + 1 == stages ? c.kp_vec : std::min(c.kp_vec, std::size_t{16} << i);
    kp_encoder_.push_back(make_block(store, "kp/conv" + std::to_string(i), width, out, 4, 2, 1, false, true,
                                     Act::relu, rng));
    width = out;
  }
  const std::size_t vec = c.z_dim + c.text_dim + c.kp_vec;
  global_ = generator_path(store, "global", vec, c, rng);
  local_ = generator_path(store, "local", vec, c, rng);
  post_ = generator_post(store, 2 * c.hidden + c.parts, c, rng);
}

GeneratorOutput KeypointImageGenerator::operator()(const Tensor& z, const Tensor& t, const Tensor& grid,
                                                   bool training) const {
  const NetConfig& c = config_;
  check_noise(z, c, "keypoint generator");
  const std::size_t N = z.dim(0);
  check_text(t, N, c, "keypoint generator");
  check_grid(grid, N, c, "keypoint generator");

  const Tensor kp_vec = flatten(run(kp_encoder_, grid, training));
  const Tensor vec = reshape(concat({z, t, kp_vec}, 1), {N, c.z_dim + c.text_dim + c.kp_vec, 1, 1});
  const Tensor mask = grid_to_binary_mask(grid);

  const Tensor global = run(global_, vec, training);
  const Tensor local = mul(run(local_, vec, training), replicate_channels(mask, c.hidden));
  GeneratorOutput out;
  out.local_probe = local;
  out.mask = mask;
  out.image = run(post_, concat_depth({local, global, grid}), training);
  return out;
}

KeypointImageDiscriminator::KeypointImageDiscriminator(ParamStore& store, const NetConfig& c, Rng& rng)
    : config_(c) {
  c.validate();
  const std::size_t S = c.image_size, M = c.grid;
  global_ = downsample(store, "global", 3, log2_exact(S) - 2, c.disc_base, true, rng);
  global_.push_back(to_vector(store, "global/vector", last_width(global_, 3), c.disc_vec, rng));
  local_down_ = downsample(store, "local", 3, log2_exact(S / M), c.disc_base, true, rng);
  const std::size_t in = last_width(local_down_, 3) + c.text_dim + c.parts;
  local_after_ = downsample(store, "local/gated", in, log2_exact(M) - 2, c.disc_base << log2_exact(S / M), false, rng);
  local_after_.push_back(to_vector(store, "local/vector", last_width(local_after_, in), c.disc_vec, rng));
  text_proj_ = make_linear(store, "text_proj", c.text_dim, c.disc_vec, rng, kInitStd);
  out_ = make_linear(store, "out", c.disc_vec, 1, rng, kInitStd);
}

Tensor KeypointImageDiscriminator::operator()(const Tensor& images, const Tensor& t, const Tensor& grid,
                                              bool training) const {
  const NetConfig& c = config_;
  check_images(images, c, "keypoint discriminator");
  const std::size_t N = images.dim(0);
  check_text(t, N, c, "keypoint discriminator");
  check_grid(grid, N, c, "keypoint discriminator");

  const Tensor global = add(flatten(run(global_, images, training)), text_proj_(t));
  Tensor local = concat_depth({run(local_down_, images, training), replicate_spatial(t, c.grid)});
  local = mul(local, replicate_channels(grid_to_binary_mask(grid), local.dim(1)));
  local = flatten(run(local_after_, concat_depth({local, grid}), training));
  return out_(leaky_relu(add(global, local), 0.2));
}

std::vector<double> scores_from_logits(const Tensor& logits) {
  std::vector<double> out;
  for (double l : logits.values()) out.push_back(l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l)));
  return out;
}

}  // namespace gawwn
