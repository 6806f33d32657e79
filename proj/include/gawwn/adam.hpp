#pragma once

#include <cstdint>
#include <vector>

#include "gawwn/tensor.hpp"

namespace gawwn {

struct AdamHyper {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers for a fixed list of parameters.
class AdamState {
 public:
  AdamState(std::vector<Tensor> params, AdamHyper hyper = {});

  const AdamHyper& hyper() const { return hyper_; }
  std::uint64_t step_count() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

  void zero_grad();

 private:
  friend void adam_step(AdamState& state);
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamHyper hyper_;
  std::uint64_t step_ = 0;
};

/// One bias-corrected ADAM update using each parameter's current grad (missing
/// grads count as zero). Throws TrainingError on a non-finite gradient, before
/// any parameter is touched.
void adam_step(AdamState& state);

}  // namespace gawwn
