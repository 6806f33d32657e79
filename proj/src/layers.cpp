#include "gawwn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace gawwn {

Tensor ParamStore::add_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({prefix_ + "/" + name, t});
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor t) {
  buffers_.push_back({prefix_ + "/" + name, t});
  return t;
}

std::vector<Tensor> ParamStore::params() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::vector<NamedTensor> ParamStore::named() const {
  std::vector<NamedTensor> out = params_;
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamStore::load(const Checkpoint& checkpoint) {
  for (auto* group : {&params_, &buffers_})
    for (auto& [name, tensor] : *group) {
      const Tensor* src = checkpoint.find(name);
      if (!src) throw FormatError("checkpoint is missing tensor '" + name + "'");
      if (src->shape() != tensor.shape())
        throw DimensionError("checkpoint tensor '" + name + "' has shape " +
                             shape_str(src->shape()) + ", expected " + shape_str(tensor.shape()));
      std::copy(src->values().begin(), src->values().end(), tensor.values_mut().begin());
    }
}

void ParamStore::set_trainable(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Conv2d make_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                 std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, double stddev) {
  return {store.add_param(name + "/weight", rng.normal_tensor({out, in, kernel, kernel}, stddev)), stride,
          pad};
}

Deconv2d make_deconv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, double stddev) {
  return {store.add_param(name + "/weight", rng.normal_tensor({in, out, kernel, kernel}, stddev)), stride,
          pad};
}

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   double stddev) {
  if (stddev <= 0) stddev = std::sqrt(2.0 / static_cast<double>(in));
  return {store.add_param(name + "/weight", rng.normal_tensor({in, out}, stddev)),
          store.add_param(name + "/bias", Tensor({out}))};
}

BatchNorm make_batch_norm(ParamStore& store, const std::string& name, std::size_t channels, Rng& rng) {
  Tensor gamma({channels});
  for (double& g : gamma.values_mut()) g = rng.normal(1.0, 0.02);
  BatchNorm bn;
  bn.gamma = store.add_param(name + "/gamma", gamma);
  bn.beta = store.add_param(name + "/beta", Tensor({channels}));
  bn.buffers.running_mean = store.add_buffer(name + "/running_mean", Tensor({channels}));
  bn.buffers.running_var = store.add_buffer(name + "/running_var", Tensor::full({channels}, 1.0));
  return bn;
}

}  // namespace gawwn
