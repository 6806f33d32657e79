#include "gawwn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gemm.hpp"

namespace gawwn {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
}

template <typename F, typename G>
Tensor unary(const Tensor& x, const char* op, F forward, G derivative) {
  auto xs = x.values();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = forward(xs[i]);
  return make_result(x.shape(), std::move(out), op, {x}, [derivative](detail::TensorImpl& o) {
    double* gx = grad_target(o.inputs[0]);
    if (!gx) return;
    auto in = o.inputs[0].values();
    for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i] * derivative(in[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](detail::TensorImpl& o) {
    for (int k = 0; k < 2; ++k)
      if (double* g = grad_target(o.inputs[k]))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](detail::TensorImpl& o) {
    if (double* g = grad_target(o.inputs[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (double* g = grad_target(o.inputs[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](detail::TensorImpl& o) {
    auto av = o.inputs[0].values(), bv = o.inputs[1].values();
    if (double* g = grad_target(o.inputs[0]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bv[i];
    if (double* g = grad_target(o.inputs[1]))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor one_minus(const Tensor& x) {
  return unary(
      x, "one_minus", [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return unary(
      x, "leaky_relu", [alpha](double v) { return v > 0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0 ? 1.0 : alpha; });
}

Tensor sum(const Tensor& x) {
  auto xs = x.values();
  const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
  return make_result({1}, {total}, "sum", {x}, [](detail::TensorImpl& o) {
    if (double* g = grad_target(o.inputs[0])) {
      const std::size_t n = o.inputs[0].numel();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw DimensionError("dot: length mismatch " + std::to_string(a.numel()) + " vs " +
                         std::to_string(b.numel()));
  auto av = a.values(), bv = b.values();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += av[i] * bv[i];
  return make_result({1}, {total}, "dot", {a, b}, [](detail::TensorImpl& o) {
    auto av = o.inputs[0].values(), bv = o.inputs[1].values();
    if (double* g = grad_target(o.inputs[0]))
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += o.grad[0] * bv[i];
    if (double* g = grad_target(o.inputs[1]))
      for (std::size_t i = 0; i < bv.size(); ++i) g[i] += o.grad[0] * av[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xs = x.values();
  return make_result(std::move(shape), std::vector<double>(xs.begin(), xs.end()), "reshape", {x},
                     [](detail::TensorImpl& o) {
                       if (double* g = grad_target(o.inputs[0]))
                         for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                     });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Maps each output flat index to its input flat index.
std::vector<std::size_t> permute_index(const Shape& in, std::span<const std::size_t> order,
                                       Shape& out_shape) {
  const std::size_t r = in.size();
  out_shape.resize(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[order[i]];
  const auto in_st = strides_of(in);
  std::vector<std::size_t> map(shape_numel(in));
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_st[order[i]];
    map[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute: order length must equal rank");
  std::vector<bool> used(r, false);
  for (std::size_t a : order) {
    if (a >= r || used[a]) throw DimensionError("permute: order is not a permutation");
    used[a] = true;
  }
  Shape out_shape;
  auto map = permute_index(x.shape(), order, out_shape);
  auto xs = x.values();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xs[map[i]];
  return make_result(std::move(out_shape), std::move(out), "permute", {x},
                     [map = std::move(map)](detail::TensorImpl& o) {
                       if (double* g = grad_target(o.inputs[0]))
                         for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
                     });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order) {
  return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range");
  if (length == 0 || start + length > s[axis])
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") exceeds extent " +
                         std::to_string(s[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t extent = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  auto xs = x.values();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xs.begin() + (o * extent + start) * inner, length * inner,
                out.begin() + o * length * inner);
  return make_result(std::move(out_shape), std::move(out), "slice", {x},
                     [outer, inner, extent, start, length](detail::TensorImpl& o) {
                       double* g = grad_target(o.inputs[0]);
                       if (!g) return;
                       for (std::size_t b = 0; b < outer; ++b) {
                         double* dst = g + (b * extent + start) * inner;
                         const double* src = o.grad.data() + b * length * inner;
                         for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok)
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s));
    extents.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto ps = parts[k].values();
    const std::size_t chunk = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(ps.begin() + o * chunk, chunk, out.begin() + o * total * inner + offset * inner);
    offset += extents[k];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), "concat", std::move(inputs),
                     [extents, outer, inner, total](detail::TensorImpl& o) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < extents.size(); ++k) {
                         const std::size_t chunk = extents[k] * inner;
                         if (double* g = grad_target(o.inputs[k]))
                           for (std::size_t b = 0; b < outer; ++b) {
                             const double* src = o.grad.data() + b * total * inner + offset * inner;
                             for (std::size_t i = 0; i < chunk; ++i) g[b * chunk + i] += src[i];
                           }
                         offset += extents[k];
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat_depth(std::initializer_list<Tensor> parts) {
  for (const Tensor& p : parts)
    if (p.rank() != 4) throw DimensionError("concat_depth: operands must be N,C,H,W");
  return concat(parts, 1);
}

Tensor replicate_rows(const Tensor& v, std::size_t n) {
  require_rank(v, 1, "replicate_rows");
  if (n == 0) throw DimensionError("replicate_rows: count must be positive");
  const std::size_t f = v.numel();
  auto vs = v.values();
  std::vector<double> out(n * f);
  for (std::size_t i = 0; i < n; ++i) std::copy(vs.begin(), vs.end(), out.begin() + i * f);
  return make_result({n, f}, std::move(out), "replicate_rows", {v}, [n, f](detail::TensorImpl& o) {
    if (double* g = grad_target(o.inputs[0]))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) g[j] += o.grad[i * f + j];
  });
}

Tensor replicate_channels(const Tensor& x, std::size_t channels) {
  require_rank(x, 4, "replicate_channels");
  if (x.dim(1) != 1) throw DimensionError("replicate_channels: input must have one channel");
  if (channels == 0) throw DimensionError("replicate_channels: count must be positive");
  const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
  auto xs = x.values();
  std::vector<double> out(n * channels * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(xs.begin() + b * hw, hw, out.begin() + (b * channels + c) * hw);
  return make_result({n, channels, x.dim(2), x.dim(3)}, std::move(out), "replicate_channels", {x},
                     [n, channels, hw](detail::TensorImpl& o) {
                       if (double* g = grad_target(o.inputs[0]))
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t c = 0; c < channels; ++c)
                             for (std::size_t i = 0; i < hw; ++i)
                               g[b * hw + i] += o.grad[(b * channels + c) * hw + i];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data());
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::TensorImpl& o) {
    if (double* ga = grad_target(o.inputs[0]))
      detail::gemm(false, true, m, k, n, o.grad.data(), o.inputs[1].values().data(), ga);
    if (double* gb = grad_target(o.inputs[1]))
      detail::gemm(true, false, k, n, m, o.inputs[0].values().data(), o.grad.data(), gb);
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  return permute(x, {1, 0});
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(1);
  if (weight.dim(0) != in || bias.dim(0) != out_f)
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  std::vector<double> out(n * out_f);
  auto bs = bias.values();
  for (std::size_t i = 0; i < n; ++i) std::copy(bs.begin(), bs.end(), out.begin() + i * out_f);
  detail::gemm(false, false, n, out_f, in, x.values().data(), weight.values().data(), out.data());
  return make_result({n, out_f}, std::move(out), "linear", {x, weight, bias},
                     [n, in, out_f](detail::TensorImpl& o) {
                       if (double* gx = grad_target(o.inputs[0]))
                         detail::gemm(false, true, n, in, out_f, o.grad.data(),
                                      o.inputs[1].values().data(), gx);
                       if (double* gw = grad_target(o.inputs[1]))
                         detail::gemm(true, false, in, out_f, n, o.inputs[0].values().data(),
                                      o.grad.data(), gw);
                       if (double* gb = grad_target(o.inputs[2]))
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < out_f; ++j) gb[j] += o.grad[i * out_f + j];
                     });
}

Tensor sigmoid_cross_entropy(const Tensor& logits, double target, double clamp) {
  if (target != 0.0 && target != 1.0) throw UsageError("sigmoid_cross_entropy: target must be 0 or 1");
  if (!(clamp > 0.0 && clamp < 0.5)) throw UsageError("sigmoid_cross_entropy: clamp must be in (0, 0.5)");
  auto ls = logits.values();
  const double n = static_cast<double>(ls.size());
  double total = 0.0;
  for (double l : ls) {
    const double p = std::clamp(stable_sigmoid(l), clamp, 1.0 - clamp);
    total -= target == 1.0 ? std::log(p) : std::log1p(-p);
  }
  return make_result({1}, {total / n}, "sigmoid_cross_entropy", {logits},
                     [target, n](detail::TensorImpl& o) {
                       double* g = grad_target(o.inputs[0]);
                       if (!g) return;
                       auto ls = o.inputs[0].values();
                       for (std::size_t i = 0; i < ls.size(); ++i)
                         g[i] += o.grad[0] * (stable_sigmoid(ls[i]) - target) / n;
                     });
}

}  // namespace gawwn
