#include "pat/optim.hpp"

#include <cmath>

namespace pat {

AdamW::AdamW(ParamStore& params, const OptimConfig& config) : params_(params), config_(config) {
  for (const auto& [name, p] : params_.items()) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::step() {
  const auto& items = params_.items();
  double sq = 0.0;
  for (const auto& [name, p] : items) {
    for (double g : p.grad_view()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  double clip = 1.0;
  if (config_.grad_clip > 0.0 && norm > config_.grad_clip) clip = config_.grad_clip / norm;

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor p = items[i].second;
    const auto grad = p.grad_view();
    auto values = p.leaf_values();
    const bool decay = p.rank() >= 2 && config_.weight_decay > 0.0;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k] * clip;
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      if (decay) values[k] -= config_.lr * config_.weight_decay * values[k];
      values[k] -= config_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
    }
  }
  return norm;
}

}  // namespace pat
