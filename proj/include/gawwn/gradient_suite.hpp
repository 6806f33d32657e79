#pragma once

// Finite-difference verification of every differentiable operation and of the
// assembled networks, over randomly drawn shapes.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gawwn {

struct GradSuiteResult {
  std::string name;
  std::size_t cases = 0;
  double max_rel_error = 0;
  double tolerance = 0;
  double seconds = 0;
  bool passed = false;
};

nlohmann::json to_json(const GradSuiteResult& r);

/// Names of every entry in the suite, in run order.
std::vector<std::string> gradient_suite_names();

/// Runs the entries whose name contains `filter` (all when empty), `cases`
/// random instances each. `on_result` is called as each entry finishes.
std::vector<GradSuiteResult> run_gradient_suite(std::uint64_t seed, std::size_t cases = 10,
                                                const std::string& filter = "",
                                                const std::function<void(const GradSuiteResult&)>& on_result = {});

}  // namespace gawwn
