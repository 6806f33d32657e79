#include "gawwn/adam.hpp"

#include <cmath>
#include <string>

namespace gawwn {

AdamState::AdamState(std::vector<Tensor> params, AdamHyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
  if (!(hyper_.learning_rate > 0)) throw UsageError("adam: learning rate must be positive");
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamState::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void adam_step(AdamState& state) {
  for (std::size_t i = 0; i < state.params_.size(); ++i) {
    if (!state.params_[i].has_grad()) continue;
    for (double g : state.params_[i].grad())
      if (!std::isfinite(g))
        throw TrainingError("adam: non-finite gradient in parameter " + std::to_string(i));
  }
  const AdamHyper& h = state.hyper_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < state.params_.size(); ++i) {
    Tensor& p = state.params_[i];
    auto w = p.values_mut();
    auto& m = state.m_[i];
    auto& v = state.v_[i];
    const bool has = p.has_grad();
    auto g = p.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      m[k] = h.beta1 * m[k] + (1 - h.beta1) * gk;
      v[k] = h.beta2 * v[k] + (1 - h.beta2) * gk * gk;
      w[k] -= h.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + h.epsilon);
    }
  }
}

}  // namespace gawwn
