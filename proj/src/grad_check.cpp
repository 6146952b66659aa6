// SPDX-License-Identifier: Apache-2.0
#include "instapbm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "instapbm/errors.hpp"

namespace instapbm {

namespace {

double evaluate(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x) {
  const Tensor y = fn(x);
  if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + to_string(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value " + std::to_string(v));
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step,
                           double tol) {
  if (!(step > 0.0)) throw ValidationError("grad_check: step must be positive");
  Tensor x = point.detach();
  x.set_requires_grad(true);
  Tensor y = fn(x);
  if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + to_string(y.shape()));
  if (!std::isfinite(y.item())) throw NumericalError("grad_check: non-finite function value");
  if (y.rank() != 0) y = reshape(y, Shape{});
  x.zero_grad();
  backward(y);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  GradCheckReport report;
  report.tolerance = tol;
  report.entries.reserve(analytic.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    Tensor probe = point.detach();
    const double origin = probe[i];
    probe.mutable_data()[i] = origin + step;
    const double up = evaluate(fn, probe);
    probe.mutable_data()[i] = origin - step;
    const double down = evaluate(fn, probe);
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kGradCheckFloor});
    GradCheckEntry e{i, analytic[i], numeric, std::abs(analytic[i] - numeric) / denom};
    report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
    report.entries.push_back(e);
  }
  report.passed = report.max_relative_error < tol;
  return report;
}

}  // namespace instapbm
