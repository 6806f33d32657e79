#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gawwn/tensor.hpp"

namespace gawwn {

struct GradCheckOptions {
  double eps = 1e-5;
  // Entries checked per tensor; 0 checks every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  // Magnitude of the terms summed into f (e.g. sum |w * out| for a probe
  // <out, w>); sets the roundoff floor. 0 uses |f|.
  double scale = 0;
};

/// Compares the analytic gradient of a scalar function against central finite
/// differences. `fn` must read the tensors in `wrt` (which must be leaves with
/// requires_grad). Returns max |analytic - numeric| / max(|analytic|, |numeric|, d)
/// over the checked entries, where d = 1e-5 * max(1, scale) keeps roundoff in
/// near-zero gradients from reading as a large relative error. When the one-sided slopes disagree (a kink in
/// relu/max-pool lies inside the step) the entry is re-measured with a step ten
/// times smaller, at most twice.
double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> wrt,
                  const GradCheckOptions& options = {});

double grad_check(const std::function<Tensor()>& fn, Tensor x, double eps);

}  // namespace gawwn
