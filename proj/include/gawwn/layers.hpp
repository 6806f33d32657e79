#pragma once

#include <string>
#include <vector>

#include "gawwn/checkpoint.hpp"
#include "gawwn/ops.hpp"
#include "gawwn/rng.hpp"

namespace gawwn {

/// Named parameters and buffers of one network, in registration order.
/// Names are namespaced by the store prefix ("gen_kp/...").
class ParamStore {
 public:
  explicit ParamStore(std::string prefix) : prefix_(std::move(prefix)) {}

  Tensor add_param(const std::string& name, Tensor t);
  Tensor add_buffer(const std::string& name, Tensor t);

  const std::string& prefix() const { return prefix_; }
  std::vector<Tensor> params() const;
  std::vector<NamedTensor> named() const;
  std::size_t param_count() const;

  /// Copies values for every registered name out of the checkpoint.
  void load(const Checkpoint& checkpoint);
  void set_trainable(bool on);
  void zero_grad();

 private:
  std::string prefix_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

struct Conv2d {
  Tensor weight;  // [F, C, k, k]
  std::size_t stride = 1, pad = 0;
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, stride, pad); }
};

struct Deconv2d {
  Tensor weight;  // [C, F, k, k]
  std::size_t stride = 1, pad = 0;
  Tensor operator()(const Tensor& x) const { return deconv2d(x, weight, stride, pad); }
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct BatchNorm {
  Tensor gamma, beta;
  BatchNormBuffers buffers;
  Tensor operator()(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, buffers, training); }
};

Conv2d make_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                 std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng,
                 double stddev = 0.02);
Deconv2d make_deconv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng,
                     double stddev = 0.02);
// stddev <= 0 selects He initialization sqrt(2 / in).
Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng, double stddev = 0.0);
BatchNorm make_batch_norm(ParamStore& store, const std::string& name, std::size_t channels, Rng& rng);

}  // namespace gawwn
