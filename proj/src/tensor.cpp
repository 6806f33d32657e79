#include "gawwn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace gawwn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

thread_local bool g_grad_enabled = true;

}  // namespace

std::vector<double>& detail::TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape) {
  check_shape(shape);
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape))
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw UsageError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::values() const { return checked().data; }
std::span<double> Tensor::values_mut() { return checked().data; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked().requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const { return checked().grad; }

std::span<double> Tensor::grad_mut() { return checked().ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = checked().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

bool Tensor::is_leaf() const { return !checked().backward; }

const char* Tensor::op_name() const { return checked().op; }

Tensor Tensor::clone() const { return Tensor(shape(), checked().data); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> data, const char* op, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  for (double v : data)
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + op);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool needs = false;
  if (g_grad_enabled)
    for (const Tensor& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    impl->requires_grad = true;
    impl->inputs = std::move(inputs);
    impl->backward = std::move(backward);
  }
  return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<Tensor> inputs, detail::BackwardFn backward) {
  return make_result(std::move(shape), std::move(data), op, std::vector<Tensor>(inputs),
                     std::move(backward));
}

double* grad_target(const Tensor& input) {
  if (!input.requires_grad()) return nullptr;
  return input.impl()->ensure_grad().data();
}

ComputeGraph ComputeGraph::trace(const Tensor& root) {
  ComputeGraph graph;
  if (!root.defined() || !root.requires_grad()) return graph;
  std::unordered_set<const detail::TensorImpl*> seen;
  // Iterative post-order DFS: (node, next input index).
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& inputs = node.impl()->inputs;
    if (next < inputs.size()) {
      const Tensor child = inputs[next++];
      if (child.requires_grad() && seen.insert(child.impl()).second) stack.emplace_back(child, 0);
      continue;
    }
    graph.nodes_.push_back(node);
    stack.pop_back();
  }
  return graph;
}

void ComputeGraph::backward() const {
  if (nodes_.empty()) return;
  for (const Tensor& n : nodes_)
    if (!n.is_leaf()) n.impl()->grad.clear();
  const Tensor& root = nodes_.back();
  auto& seed = root.impl()->ensure_grad();
  std::fill(seed.begin(), seed.end(), 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::TensorImpl* impl = it->impl();
    if (impl->backward && !impl->grad.empty()) impl->backward(*impl);
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  ComputeGraph::trace(loss).backward();
}

}  // namespace gawwn
