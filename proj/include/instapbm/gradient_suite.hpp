// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace instapbm {

struct GradientCaseResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_relative_error = 0.0;
  bool passed() const { return failures == 0 && instances > 0; }
};

struct GradientSuiteResult {
  std::vector<GradientCaseResult> cases;
  double tolerance = 0.0;
  double seconds = 0.0;
  bool passed() const;
  nlohmann::json to_json() const;
};

/// Names of every case the suite runs: each tensor operation, each loss term
/// and the combined objectives.
std::vector<std::string> gradient_case_names();

/// Central-difference checks of every case on `instances` random draws.
GradientSuiteResult run_gradient_suite(double tolerance = 1e-4, std::size_t instances = 20, std::uint64_t seed = 7);

}  // namespace instapbm
