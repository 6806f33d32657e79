#include <doctest.h>

#include <set>

#include "gawwn/gradient_suite.hpp"

using namespace gawwn;

TEST_SUITE("gradients") {

TEST_CASE("suite names are unique and cover the spatial ops and networks") {
  const auto names = gradient_suite_names();
  const std::set<std::string> unique(names.begin(), names.end());
  CHECK(unique.size() == names.size());
  for (const char* must : {"conv2d", "deconv2d", "matmul", "grid_sample_input", "grid_sample_theta",
                           "warp_into_bbox", "crop_to_bbox", "keypoint_generator", "bbox_generator",
                           "keypoint_image_discriminator", "joint_embedding_loss"})
    CHECK(unique.count(must) == 1);
}

TEST_CASE("filtered run reports every requested entry") {
  std::size_t callbacks = 0;
  const auto results = run_gradient_suite(3, 10, "grid_sample", [&](const GradSuiteResult&) { ++callbacks; });
  REQUIRE(results.size() == 2);
  CHECK(callbacks == 2);
  for (const auto& r : results) {
    CAPTURE(r.name);
    CHECK(r.cases == 10);
    CHECK(r.passed);
    CHECK(r.max_rel_error < r.tolerance);
    CHECK(r.tolerance == 1e-5);
    CHECK(to_json(r)["name"] == r.name);
  }
  CHECK(run_gradient_suite(3, 10, "no such op").empty());
}

TEST_CASE("network composites use the looser tolerance") {
  const auto results = run_gradient_suite(4, 10, "keypoint_discriminator");
  REQUIRE(results.size() == 1);
  CHECK(results[0].tolerance == 1e-4);
  CHECK(results[0].passed);
}

}  // TEST_SUITE
