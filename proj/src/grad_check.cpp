#include "pat/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pat/error.hpp"

namespace pat {

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << "max rel err " << max_rel_error << " at element " << worst_index << " (analytic "
      << worst_analytic << ", numeric " << worst_numeric << ") over " << checked
      << " elements";
  return out.str();
}

GradCheckReport grad_check(const ScalarFn& f, Tensor& x, const GradCheckOptions& options) {
  if (!x.is_leaf() || !x.requires_grad()) {
    throw GradCheckError("grad_check: x must be a leaf that requires grad");
  }
  DetachTapeScope tape(DetachMode::Record);
  x.zero_grad();
  const Tensor base = f(x);
  if (!std::isfinite(base.item())) {
    throw GradCheckError("grad_check: non-finite function value at base point");
  }
  base.backward();
  const std::vector<double> analytic = x.grad();

  const std::size_t n = x.numel();
  std::vector<std::size_t> indices;
  if (options.max_elements == 0 || options.max_elements >= n) {
    indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
  } else {
    for (std::size_t j = 0; j < options.max_elements; ++j) {
      indices.push_back(j * n / options.max_elements);
    }
  }

  GradCheckReport report;
  auto values = x.leaf_values();
  for (std::size_t i : indices) {
    const double original = values[i];
    const double h = options.step_scale * (1.0 + std::fabs(original));
    tape.set_mode(DetachMode::Replay);
    values[i] = original + h;
    const double plus = f(x).item();
    tape.set_mode(DetachMode::Replay);
    values[i] = original - h;
    const double minus = f(x).item();
    values[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus) || !std::isfinite(analytic[i])) {
      report.finite = false;
      throw GradCheckError("grad_check: non-finite value while probing element " +
                           std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * h);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric), options.floor});
    const double rel = std::fabs(analytic[i] - numeric) / denom;
    if (rel > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
    report.checked += 1;
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace pat
