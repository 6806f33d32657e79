#include "gawwn/gradient_suite.hpp"

#include <chrono>
#include <cmath>

#include "gawwn/grad_check.hpp"
#include "gawwn/models.hpp"

namespace gawwn {

namespace {

constexpr double kOpTolerance = 1e-5;
constexpr double kNetworkTolerance = 1e-4;

struct Case {
  Case(std::function<Tensor()> f, std::vector<Tensor> w) : fn(std::move(f)), wrt(std::move(w)) {}
  std::function<Tensor()> fn;
  std::vector<Tensor> wrt;
  std::size_t max_entries = 0;
  double scale = 0;
  // Keeps networks and their stores alive for as long as fn is used.
  std::shared_ptr<void> owner;
};

using Builder = std::function<Case(Rng&)>;

struct Entry {
  std::string name;
  double tolerance;
  Builder build;
};

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

Tensor leaf(Rng& rng, Shape shape, double stddev = 1.0) {
  return rng.normal_tensor(std::move(shape), stddev).set_requires_grad(true);
}

// Scalar probe: <f(), W> with fixed random W, so every output entry matters.
Case probe(Rng& rng, std::function<Tensor()> f, std::vector<Tensor> wrt) {
  Tensor out;
  {
    NoGradGuard guard;
    out = f();
  }
  const Tensor w = rng.normal_tensor(out.shape());
  Case c([f = std::move(f), w] { return dot(f(), w); }, std::move(wrt));
  for (std::size_t i = 0; i < out.numel(); ++i) c.scale += std::abs(out.values()[i] * w.values()[i]);
  return c;
}

std::vector<BBox> random_boxes(Rng& rng, std::size_t n) {
  std::vector<BBox> boxes;
  for (std::size_t i = 0; i < n; ++i) {
    BBox b;
    b.w = rng.uniform(0.2, 0.9);
    b.h = rng.uniform(0.2, 0.9);
    b.x0 = rng.uniform(0.0, 1.0 - b.w);
    b.y0 = rng.uniform(0.0, 1.0 - b.h);
    boxes.push_back(b);
  }
  return boxes;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i < 2 ? i : rng.index(classes));
  return labels;
}

// Random weights at a scale where gradients are well above finite-difference noise.
void rescale_params(ParamStore& store, Rng& rng) {
  for (Tensor p : store.params())
    for (double& v : p.values_mut()) v = rng.normal(0.0, 0.3);
}

NetConfig tiny_net(Rng& rng) {
  NetConfig c;
  c.z_dim = pick(rng, 2, 5);
  c.text_dim = pick(rng, 2, 6);
  c.grid = 8;
  c.parts = pick(rng, 2, 4);
  c.hidden = pick(rng, 2, 4);
  c.image_size = 16;
  c.path_base = pick(rng, 2, 4);
  c.post_base = pick(rng, 2, 4);
  c.disc_base = pick(rng, 2, 4);
  c.disc_vec = pick(rng, 2, 5);
  c.kp_vec = pick(rng, 2, 4);
  c.loc_vec = pick(rng, 2, 4);
  return c;
}

Tensor random_grid(Rng& rng, std::size_t n, const NetConfig& c) {
  std::vector<KeypointSet> sets(n);
  for (auto& s : sets)
    for (std::size_t k = 0; k < c.parts; ++k) s.push_back({rng.uniform(), rng.uniform(), rng.bernoulli(0.8) ? 1.0 : 0.0});
  return keypoints_to_grid(sets, c.grid);
}

Case network_case(std::shared_ptr<void> owner, ParamStore& store, Rng& rng, std::function<Tensor()> f,
                  std::vector<Tensor> inputs) {
  rescale_params(store, rng);
  auto wrt = store.params();
  wrt.insert(wrt.end(), inputs.begin(), inputs.end());
  Case c = probe(rng, std::move(f), std::move(wrt));
  c.max_entries = 3;
  c.owner = std::move(owner);
  return c;
}

std::vector<Entry> entries() {
  std::vector<Entry> e;
  auto op = [&](std::string name, Builder b) { e.push_back({std::move(name), kOpTolerance, std::move(b)}); };

  auto shape_nd = [](Rng& rng) {
    Shape s;
    const std::size_t rank = pick(rng, 1, 4);
    for (std::size_t i = 0; i < rank; ++i) s.push_back(pick(rng, 1, 4));
    return s;
  };

  op("add", [=](Rng& r) {
    auto s = shape_nd(r);
    auto a = leaf(r, s), b = leaf(r, s);
    return probe(r, [=] { return add(a, b); }, {a, b});
  });
  op("sub", [=](Rng& r) {
    auto s = shape_nd(r);
    auto a = leaf(r, s), b = leaf(r, s);
    return probe(r, [=] { return sub(a, b); }, {a, b});
  });
  op("mul", [=](Rng& r) {
    auto s = shape_nd(r);
    auto a = leaf(r, s), b = leaf(r, s);
    return probe(r, [=] { return mul(a, b); }, {a, b});
  });
  op("scale", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    const double k = r.normal();
    return probe(r, [=] { return scale(a, k); }, {a});
  });
  op("add_scalar", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    const double k = r.normal();
    return probe(r, [=] { return add_scalar(a, k); }, {a});
  });
  op("one_minus", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    return probe(r, [=] { return one_minus(a); }, {a});
  });
  op("tanh", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    return probe(r, [=] { return tanh(a); }, {a});
  });
  op("sigmoid", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r), 3.0);
    return probe(r, [=] { return sigmoid(a); }, {a});
  });
  op("relu", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    return probe(r, [=] { return relu(a); }, {a});
  });
  op("leaky_relu", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    return probe(r, [=] { return leaky_relu(a, 0.2); }, {a});
  });
  op("sum", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    return Case{[=] { return sum(a); }, {a}};
  });
  op("mean", [=](Rng& r) {
    auto a = leaf(r, shape_nd(r));
    return Case{[=] { return mean(a); }, {a}};
  });
  op("dot", [=](Rng& r) {
    auto s = shape_nd(r);
    auto a = leaf(r, s), b = leaf(r, s);
    return Case{[=] { return dot(a, b); }, {a, b}};
  });
  op("reshape", [=](Rng& r) {
    const std::size_t m = pick(r, 1, 4), n = pick(r, 1, 4), k = pick(r, 1, 3);
    auto a = leaf(r, {m, n, k});
    return probe(r, [=] { return reshape(a, {k, m * n}); }, {a});
  });
  op("permute", [=](Rng& r) {
    auto a = leaf(r, {pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3)});
    auto order = r.permutation(4);
    return probe(r, [=] { return permute(a, order); }, {a});
  });
  op("slice", [=](Rng& r) {
    auto s = shape_nd(r);
    const std::size_t axis = r.index(s.size());
    const std::size_t start = r.index(s[axis]);
    const std::size_t len = 1 + r.index(s[axis] - start);
    auto a = leaf(r, s);
    return probe(r, [=] { return slice(a, axis, start, len); }, {a});
  });
  op("concat", [=](Rng& r) {
    auto s = shape_nd(r);
    const std::size_t axis = r.index(s.size());
    auto s2 = s;
    s2[axis] = pick(r, 1, 3);
    auto a = leaf(r, s), b = leaf(r, s2);
    return probe(r, [=] { return concat({a, b}, axis); }, {a, b});
  });
  op("replicate_rows", [=](Rng& r) {
    auto a = leaf(r, {pick(r, 1, 5)});
    const std::size_t n = pick(r, 1, 4);
    return probe(r, [=] { return replicate_rows(a, n); }, {a});
  });
  op("replicate_channels", [=](Rng& r) {
    auto a = leaf(r, {pick(r, 1, 3), 1, pick(r, 1, 4), pick(r, 1, 4)});
    const std::size_t c = pick(r, 1, 4);
    return probe(r, [=] { return replicate_channels(a, c); }, {a});
  });
  op("matmul", [=](Rng& r) {
    const std::size_t m = pick(r, 1, 5), k = pick(r, 1, 5), n = pick(r, 1, 5);
    auto a = leaf(r, {m, k}), b = leaf(r, {k, n});
    return probe(r, [=] { return matmul(a, b); }, {a, b});
  });
  op("transpose", [=](Rng& r) {
    auto a = leaf(r, {pick(r, 1, 5), pick(r, 1, 5)});
    return probe(r, [=] { return transpose(a); }, {a});
  });
  op("linear", [=](Rng& r) {
    const std::size_t n = pick(r, 1, 4), in = pick(r, 1, 6), out = pick(r, 1, 6);
    auto x = leaf(r, {n, in}), w = leaf(r, {in, out}), b = leaf(r, {out});
    return probe(r, [=] { return linear(x, w, b); }, {x, w, b});
  });
  op("conv2d", [=](Rng& r) {
    const std::size_t k = pick(r, 1, 4), stride = pick(r, 1, 2), pad = r.index(std::min<std::size_t>(k, 2));
    const std::size_t H = pick(r, k, k + 5), W = pick(r, k, k + 5);
    auto x = leaf(r, {pick(r, 1, 2), pick(r, 1, 3), H, W}), w = leaf(r, {pick(r, 1, 3), x.dim(1), k, k});
    return probe(r, [=] { return conv2d(x, w, stride, pad); }, {x, w});
  });
  op("deconv2d", [=](Rng& r) {
    const std::size_t k = pick(r, 2, 4), stride = pick(r, 1, 2), pad = r.index(std::min<std::size_t>(k - 1, 2));
    auto x = leaf(r, {pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)});
    auto w = leaf(r, {x.dim(1), pick(r, 1, 3), k, k});
    return probe(r, [=] { return deconv2d(x, w, stride, pad); }, {x, w});
  });
  op("add_channel_bias", [=](Rng& r) {
    auto x = leaf(r, {pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 3), pick(r, 1, 3)}), b = leaf(r, {x.dim(1)});
    return probe(r, [=] { return add_channel_bias(x, b); }, {x, b});
  });
  op("max_pool2d", [=](Rng& r) {
    const std::size_t kh = pick(r, 1, 3), kw = pick(r, 1, 3);
    auto x = leaf(r, {pick(r, 1, 2), pick(r, 1, 3), pick(r, kh, 7), pick(r, kw, 7)});
    return probe(r, [=] { return max_pool2d(x, kh, kw); }, {x});
  });
  op("mean_pool", [=](Rng& r) {
    const std::size_t kh = pick(r, 1, 3), kw = pick(r, 1, 3);
    auto x = leaf(r, {pick(r, 1, 2), pick(r, 1, 3), pick(r, kh, 7), pick(r, kw, 7)});
    return probe(r, [=] { return mean_pool(x, kh, kw); }, {x});
  });
  for (bool training : {true, false}) {
    op(training ? "batch_norm_train" : "batch_norm_eval", [=](Rng& r) {
      const std::size_t C = pick(r, 1, 4);
      Shape s = r.bernoulli(0.5) ? Shape{pick(r, 2, 5), C} : Shape{pick(r, 2, 3), C, pick(r, 1, 3), pick(r, 1, 3)};
      auto x = leaf(r, s), g = leaf(r, {C}), b = leaf(r, {C});
      auto buffers = std::make_shared<BatchNormBuffers>(
          BatchNormBuffers{r.normal_tensor({C}), r.uniform_tensor({C}, 0.5, 2.0)});
      Case c = probe(r, [=] { return batch_norm(x, g, b, *buffers, training); }, {x, g, b});
      c.owner = buffers;
      return c;
    });
  }
  op("char_conv1d", [=](Rng& r) {
    const std::size_t B = pick(r, 1, 3), L = pick(r, 4, 12), width = pick(r, 1, 4), F = pick(r, 1, 4);
    const std::size_t A = pick(r, 3, 8);
    std::vector<int> ids(B * L);
    for (int& id : ids) id = r.bernoulli(0.2) ? -1 : static_cast<int>(r.index(A));
    auto w = leaf(r, {F, A, width}), b = leaf(r, {F});
    return probe(r, [=] { return char_conv1d(ids, B, L, w, b); }, {w, b});
  });
  op("sigmoid_cross_entropy", [=](Rng& r) {
    auto x = leaf(r, {pick(r, 1, 6), 1}, 2.0);
    const double target = r.bernoulli(0.5) ? 1.0 : 0.0;
    return Case{[=] { return sigmoid_cross_entropy(x, target); }, {x}};
  });
  op("grid_sample_input", [=](Rng& r) {
    const std::size_t N = pick(r, 1, 2);
    auto x = leaf(r, {N, pick(r, 1, 3), pick(r, 2, 6), pick(r, 2, 6)});
    std::vector<AffineParams> th(N);
    for (auto& a : th)
      for (double& v : a.theta) v += r.normal(0.0, 0.3);
    const Tensor theta = affine_tensor(th);
    const std::size_t oh = pick(r, 2, 6), ow = pick(r, 2, 6);
    return probe(r, [=] { return grid_sample_bilinear(x, theta, oh, ow); }, {x});
  });
  op("grid_sample_theta", [=](Rng& r) {
    const std::size_t N = pick(r, 1, 2);
    const Tensor x = r.normal_tensor({N, pick(r, 1, 3), pick(r, 2, 6), pick(r, 2, 6)});
    auto theta = leaf(r, {N, 2, 3}, 0.3);
    for (std::size_t n = 0; n < N; ++n) {
      theta.values_mut()[n * 6] += 1;
      theta.values_mut()[n * 6 + 4] += 1;
    }
    const std::size_t oh = pick(r, 2, 6), ow = pick(r, 2, 6);
    return probe(r, [=] { return grid_sample_bilinear(x, theta, oh, ow); }, {theta});
  });
  op("replicate_spatial", [=](Rng& r) {
    auto v = leaf(r, {pick(r, 1, 3), pick(r, 1, 4)});
    const std::size_t M = pick(r, 1, 5);
    return probe(r, [=] { return replicate_spatial(v, M); }, {v});
  });
  op("mask_outside_bbox", [=](Rng& r) {
    const std::size_t N = pick(r, 1, 3), M = pick(r, 2, 8);
    auto x = leaf(r, {N, pick(r, 1, 3), M, M});
    auto boxes = random_boxes(r, N);
    return probe(r, [=] { return mask_outside_bbox(x, boxes); }, {x});
  });
  op("warp_into_bbox", [=](Rng& r) {
    const std::size_t N = pick(r, 1, 3), M = pick(r, 2, 8);
    auto x = leaf(r, {N, pick(r, 1, 3), M, M});
    auto boxes = random_boxes(r, N);
    return probe(r, [=] { return warp_into_bbox(x, boxes); }, {x});
  });
  op("crop_to_bbox", [=](Rng& r) {
    const std::size_t N = pick(r, 1, 3), M = pick(r, 2, 8);
    auto x = leaf(r, {N, pick(r, 1, 3), M, M});
    auto boxes = random_boxes(r, N);
    const std::size_t out = pick(r, 1, 5);
    return probe(r, [=] { return crop_to_bbox(x, boxes, out); }, {x});
  });
  op("average_maps", [=](Rng& r) {
    Shape s{pick(r, 1, 3), pick(r, 1, 3), pick(r, 1, 3)};
    std::vector<Tensor> maps;
    for (std::size_t i = 0, n = pick(r, 1, 4); i < n; ++i) maps.push_back(leaf(r, s));
    return probe(r, [=] { return average_maps(maps); }, maps);
  });
  op("joint_embedding_loss", [=](Rng& r) {
    const std::size_t N = pick(r, 2, 6), T = pick(r, 1, 5);
    auto img = leaf(r, {N, T}), txt = leaf(r, {N, T});
    auto labels = random_labels(r, N, pick(r, 2, 3));
    return Case{[=] { return joint_embedding_loss(img, txt, labels); }, {img, txt}};
  });

  // Several smooth operations chained. Central-difference truncation
  // (eps^2 f'''/6) keeps this near 1e-6, so it shares the per-op bound.
  e.push_back({"mixed_composite", kOpTolerance, [](Rng& r) {
                 const std::size_t N = pick(r, 1, 2), C = pick(r, 1, 3), H = pick(r, 4, 6);
                 auto x = leaf(r, {N, C, H, H});
                 auto w = leaf(r, {2, C, 3, 3}, 0.5), b = leaf(r, {2});
                 auto w2 = leaf(r, {2, 2, 2, 2}, 0.5);
                 auto fc = leaf(r, {2 * H * H, 3}, 0.3), fb = leaf(r, {3});
                 return probe(r, [=] {
                   Tensor h = tanh(add_channel_bias(conv2d(x, w, 1, 1), b));
                   h = sigmoid(deconv2d(h, w2, 1, 0));
                   h = slice(h, 2, 0, H);
                   h = slice(h, 3, 0, H);
                   Tensor flat = reshape(h, {N, 2 * H * H});
                   Tensor y = linear(flat, fc, fb);
                   return mul(y, one_minus(scale(y, 0.5)));
                 }, {x, w, b, w2, fc, fb});
               }});

  auto net = [&](std::string name, Builder b) { e.push_back({std::move(name), kNetworkTolerance, std::move(b)}); };
  net("keypoint_generator", [](Rng& r) {
    KeypointNetConfig c{pick(r, 2, 6), pick(r, 2, 6), pick(r, 2, 5), pick(r, 4, 12)};
    auto owner = std::make_shared<KeypointCompletion>(c, r);
    const std::size_t N = pick(r, 1, 3), D = 3 * c.num_parts;
    auto z = leaf(r, {N, c.z_dim}), t = leaf(r, {N, c.text_dim});
    auto kp = r.uniform_tensor({N, D}, 0, 1).set_requires_grad(true);
    Tensor s({N, D});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < c.num_parts; ++k)
        if (r.bernoulli(0.5))
          for (std::size_t j = 0; j < 3; ++j) s.values_mut()[n * D + 3 * k + j] = 1;
    KeypointCompletion& m = *owner;
    return network_case(owner, m.gen_store, r, [&m, z, t, kp, s] { return m.G(z, t, kp, s); }, {z, t, kp});
  });
  net("keypoint_discriminator", [](Rng& r) {
    KeypointNetConfig c{pick(r, 2, 6), pick(r, 2, 6), pick(r, 2, 5), pick(r, 4, 12)};
    auto owner = std::make_shared<KeypointCompletion>(c, r);
    const std::size_t N = pick(r, 1, 3);
    auto kp = r.uniform_tensor({N, 3 * c.num_parts}, 0, 1).set_requires_grad(true);
    auto t = leaf(r, {N, c.text_dim});
    KeypointCompletion& m = *owner;
    return network_case(owner, m.disc_store, r, [&m, kp, t] { return m.D(kp, t); }, {kp, t});
  });
  net("text_encoder", [](Rng& r) {
    TextEncoderConfig c;
    c.embed_dim = pick(r, 2, 5);
    c.conv1_filters = pick(r, 2, 4);
    c.conv1_width = pick(r, 2, 4);
    c.conv2_filters = pick(r, 2, 4);
    c.conv2_width = pick(r, 2, 3);
    c.gru_hidden = pick(r, 2, 4);
    auto owner = std::make_shared<TextModel>(c, 16, r);
    const std::vector<std::string> captions{"a red bird with a black beak.", "this bird is small and blue"};
    TextModel& m = *owner;
    Case k = network_case(owner, m.joint.store, r, [&m, captions] { return m.joint.text.encode(captions); }, {});
    return k;
  });
  net("image_encoder", [](Rng& r) {
    TextEncoderConfig c;
    c.embed_dim = pick(r, 2, 5);
    auto owner = std::make_shared<TextModel>(c, 16, r);
    auto x = leaf(r, {pick(r, 1, 2), 3, 16, 16}, 0.5);
    TextModel& m = *owner;
    return network_case(owner, m.joint.store, r, [&m, x] { return m.joint.image(x); }, {x});
  });
  net("bbox_generator", [](Rng& r) {
    const NetConfig c = tiny_net(r);
    auto owner = std::make_shared<BBoxGan>(c, r);
    const std::size_t N = pick(r, 2, 3);
    auto z = leaf(r, {N, c.z_dim}), t = leaf(r, {N, c.text_dim});
    auto boxes = random_boxes(r, N);
    BBoxGan& m = *owner;
    return network_case(owner, m.gen_store, r, [&m, z, t, boxes] { return m.G(z, t, boxes, true).image; }, {z, t});
  });
  net("bbox_discriminator", [](Rng& r) {
    const NetConfig c = tiny_net(r);
    auto owner = std::make_shared<BBoxGan>(c, r);
    const std::size_t N = pick(r, 2, 3);
    auto x = leaf(r, {N, 3, c.image_size, c.image_size}, 0.5), t = leaf(r, {N, c.text_dim});
    auto boxes = random_boxes(r, N);
    BBoxGan& m = *owner;
    return network_case(owner, m.disc_store, r, [&m, x, t, boxes] { return m.D(x, t, boxes, true); }, {x, t});
  });
  net("keypoint_image_generator", [](Rng& r) {
    const NetConfig c = tiny_net(r);
    auto owner = std::make_shared<KeypointGan>(c, r);
    const std::size_t N = pick(r, 2, 3);
    auto z = leaf(r, {N, c.z_dim}), t = leaf(r, {N, c.text_dim});
    const Tensor grid = random_grid(r, N, c);
    KeypointGan& m = *owner;
    return network_case(owner, m.gen_store, r, [&m, z, t, grid] { return m.G(z, t, grid, true).image; }, {z, t});
  });
  net("keypoint_image_discriminator", [](Rng& r) {
    const NetConfig c = tiny_net(r);
    auto owner = std::make_shared<KeypointGan>(c, r);
    const std::size_t N = pick(r, 2, 3);
    auto x = leaf(r, {N, 3, c.image_size, c.image_size}, 0.5), t = leaf(r, {N, c.text_dim});
    const Tensor grid = random_grid(r, N, c);
    KeypointGan& m = *owner;
    return network_case(owner, m.disc_store, r, [&m, x, t, grid] { return m.D(x, t, grid, true); }, {x, t});
  });
  return e;
}

}  // namespace

nlohmann::json to_json(const GradSuiteResult& r) {
  return {{"name", r.name},           {"cases", r.cases},     {"max_rel_error", r.max_rel_error},
          {"tolerance", r.tolerance}, {"seconds", r.seconds}, {"passed", r.passed}};
}

std::vector<std::string> gradient_suite_names() {
  std::vector<std::string> names;
  for (const auto& e : entries()) names.push_back(e.name);
  return names;
}

std::vector<GradSuiteResult> run_gradient_suite(std::uint64_t seed, std::size_t cases, const std::string& filter,
                                                const std::function<void(const GradSuiteResult&)>& on_result) {
  std::vector<GradSuiteResult> results;
  std::uint64_t stream = 0;
  for (const auto& entry : entries()) {
    ++stream;
    if (!filter.empty() && entry.name.find(filter) == std::string::npos) continue;
    const auto start = std::chrono::steady_clock::now();
    GradSuiteResult res{entry.name, cases, 0.0, entry.tolerance, 0.0, false};
    Rng rng(seed * 1000003ULL + stream);
    for (std::size_t i = 0; i < cases; ++i) {
      Case c = entry.build(rng);
      GradCheckOptions opt;
      opt.max_entries = c.max_entries;
      opt.seed = rng.next_u64();
      opt.scale = c.scale;
      res.max_rel_error = std::max(res.max_rel_error, grad_check(c.fn, c.wrt, opt));
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.passed = res.max_rel_error < res.tolerance;
    if (on_result) on_result(res);
    results.push_back(res);
  }
  return results;
}

}  // namespace gawwn
