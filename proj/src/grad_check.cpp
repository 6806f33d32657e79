#include "gawwn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "gawwn/rng.hpp"

namespace gawwn {

namespace {

double eval_scalar(const std::function<Tensor()>& fn) {
  NoGradGuard guard;
  const Tensor out = fn();
  if (out.numel() != 1) throw UsageError("grad_check: function must return a scalar");
  return out.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> wrt,
                  const GradCheckOptions& options) {
  if (!(options.eps > 0)) throw UsageError("grad_check: eps must be positive");
  for (Tensor& t : wrt) {
    if (!t.is_leaf() || !t.requires_grad())
      throw UsageError("grad_check: tensors must be leaves with requires_grad");
    t.zero_grad();
  }
  const Tensor loss = fn();
  if (loss.numel() != 1) throw UsageError("grad_check: function must return a scalar");
  backward(loss);
  const double f0 = eval_scalar(fn);
  const double floor = 1e-5 * std::max(1.0, options.scale > 0 ? options.scale : std::abs(f0));

  Rng rng(options.seed);
  double worst = 0.0;
  for (Tensor& t : wrt) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> entries(t.numel());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (options.max_entries && options.max_entries < entries.size()) {
      std::shuffle(entries.begin(), entries.end(), rng.engine());
      entries.resize(options.max_entries);
    }
    auto values = t.values_mut();
    for (std::size_t idx : entries) {
      const double original = values[idx];
      auto at = [&](double delta) {
        values[idx] = original + delta;
        const double v = eval_scalar(fn);
        values[idx] = original;
        return v;
      };
      const double h = options.eps;
      const double fp = at(h), fm = at(-h);
      double numeric = (fp - fm) / (2 * h);
      const double right = (fp - f0) / h, left = (f0 - fm) / h;
      const double a = analytic[idx];
      if (std::abs(right - left) > 1e-4 * std::max({std::abs(right), std::abs(left), floor})) {
        // The slopes disagree: strong curvature or a kink (relu, max-pool,
        // hinge) inside the step. At a kink either one-sided derivative is a
        // valid reference, so compare against the closest of the central and
        // the Richardson-extrapolated one-sided estimates.
        const double right2 = (at(h / 2) - f0) / (h / 2), left2 = (f0 - at(-h / 2)) / (h / 2);
        for (double candidate : {2 * right2 - right, 2 * left2 - left})
          if (std::abs(candidate - a) < std::abs(numeric - a)) numeric = candidate;
      }
      // Below the floor the central difference is dominated by roundoff
      // (about 1e-16 * |f| / eps), so errors are measured absolutely there.
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor()>& fn, Tensor x, double eps) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check(fn, std::vector<Tensor>{std::move(x)}, options);
}

}  // namespace gawwn
