#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// Layout is row-major; image tensors are N,C,H,W throughout the library.
// A Tensor is a cheap handle: copies share storage, which is how parameters
// are shared between a network and its optimizer. Use clone() for a deep copy.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gawwn/errors.hpp"

namespace gawwn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;
using BackwardFn = std::function<void(TensorImpl& out)>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  // Graph linkage; empty for leaves.
  std::vector<Tensor> inputs;
  BackwardFn backward;
  const char* op = "leaf";

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writes bypass the graph; only meant for leaves (parameters, inputs).
  std::span<double> values_mut();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;

  // Deep copy of the values as a fresh leaf without grad.
  Tensor clone() const;
  // Fresh leaf sharing nothing with the graph (values copied).
  Tensor detach() const { return clone(); }

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(Shape, std::vector<double>, const char*,
                            std::initializer_list<Tensor>, detail::BackwardFn);
  friend Tensor make_result(Shape, std::vector<double>, const char*, std::vector<Tensor>,
                            detail::BackwardFn);
};

/// True unless a NoGradGuard is active on the calling thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Wraps a freshly computed buffer as an op output. Records the graph edge only
/// when grad mode is on and some input requires grad. Throws NumericError when
/// the buffer holds NaN or Inf.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<Tensor> inputs, detail::BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs, detail::BackwardFn backward);

/// Accumulation target for an op input, or nullptr when it needs no gradient.
double* grad_target(const Tensor& input);

/// Topologically ordered view of the graph that produced a tensor.
class ComputeGraph {
 public:
  static ComputeGraph trace(const Tensor& root);

  // Inputs precede the ops that consume them; the root is last.
  const std::vector<Tensor>& nodes() const { return nodes_; }

  // Seeds the root with ones and runs every local backward rule in reverse order.
  void backward() const;

 private:
  std::vector<Tensor> nodes_;
};

/// Populates grads of every requires_grad leaf reachable from a scalar loss.
void backward(const Tensor& loss);

}  // namespace gawwn
