#pragma once

#include <cstddef>
#include <vector>

#include "pat/config.hpp"
#include "pat/nn.hpp"

namespace pat {

// Adam with decoupled weight decay, applied to matrices and kernels
// (rank >= 2) only. Optional global-norm gradient clipping.
class AdamW {
 public:
  AdamW(ParamStore& params, const OptimConfig& config);

  // Applies one update from the current gradient buffers. Returns the global
  // gradient norm before clipping.
  double step();

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t steps) { steps_ = steps; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParamStore& params_;
  OptimConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace pat
