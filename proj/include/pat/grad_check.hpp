#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "pat/tensor.hpp"

namespace pat {

struct GradCheckOptions {
  // Central-difference step is step_scale * (1 + |x_i|).
  double step_scale = 1e-3;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-2;
  // 0 checks every element; otherwise an evenly spaced subset of this size.
  std::size_t max_elements = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool finite = true;
  bool passed = false;

  std::string summary() const;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares backward() gradients of f at the leaf x against central finite
// differences. Stop-gradient values recorded at x are replayed during the
// perturbed evaluations, so the check differentiates the surrogate function
// backward() differentiates. Throws GradCheckError on non-finite values.
GradCheckReport grad_check(const ScalarFn& f, Tensor& x, const GradCheckOptions& options = {});

}  // namespace pat
