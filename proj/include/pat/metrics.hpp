#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pat/tensor.hpp"

namespace pat {

// Accumulates per-class intersections and unions over any number of label
// maps. Pixels whose ground truth is the ignore id are skipped.
class IouAccumulator {
 public:
  explicit IouAccumulator(std::size_t num_classes, std::size_t ignore_label = 255);

  void add(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gt);

  // IoU per class; classes absent from every ground truth report -1.
  std::vector<double> per_class() const;
  // Mean IoU over classes present in the ground truth.
  double mean() const;

 private:
  std::size_t num_classes_;
  std::size_t ignore_;
  std::vector<std::uint64_t> inter_, uni_, gt_count_;
};

double miou(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gt,
            std::size_t num_classes, std::size_t ignore_label = 255);

// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Tensor& pred, const Tensor& target);
double psnr_from_mse(double mse);

}  // namespace pat
