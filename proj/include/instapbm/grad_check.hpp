// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "instapbm/tensor.hpp"

namespace instapbm {

struct GradCheckEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Relative errors are measured against max(|analytic|, |numeric|, floor) so
// that coordinates with vanishing gradient are compared absolutely.
inline constexpr double kGradCheckFloor = 1e-3;

/// Compares the reverse-mode gradient of a scalar function at `point` with
/// central differences of width 2*step, coordinate by coordinate.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step = 1e-5,
                           double tol = 1e-4);

}  // namespace instapbm
