#include "pat/metrics.hpp"

#include <cmath>

#include "pat/error.hpp"

namespace pat {

IouAccumulator::IouAccumulator(std::size_t num_classes, std::size_t ignore_label)
    : num_classes_(num_classes),
      ignore_(ignore_label),
      inter_(num_classes, 0),
      uni_(num_classes, 0),
      gt_count_(num_classes, 0) {}

void IouAccumulator::add(const std::vector<std::size_t>& pred,
                         const std::vector<std::size_t>& gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("miou: prediction has " + std::to_string(pred.size()) +
                         " labels, ground truth " + std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_) continue;
    if (gt[i] >= num_classes_ || pred[i] >= num_classes_) {
      throw DataError("miou: label outside [0, " + std::to_string(num_classes_) + ")");
    }
    gt_count_[gt[i]] += 1;
    if (pred[i] == gt[i]) {
      inter_[gt[i]] += 1;
      uni_[gt[i]] += 1;
    } else {
      uni_[gt[i]] += 1;
      uni_[pred[i]] += 1;
    }
  }
}

std::vector<double> IouAccumulator::per_class() const {
  std::vector<double> out(num_classes_, -1.0);
  for (std::size_t k = 0; k < num_classes_; ++k) {
    if (gt_count_[k] == 0) continue;
    out[k] = static_cast<double>(inter_[k]) / static_cast<double>(uni_[k]);
  }
  return out;
}

double IouAccumulator::mean() const {
  // Extended precision keeps small rational cases correctly rounded.
  long double total = 0.0L;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes_; ++k) {
    if (gt_count_[k] == 0) continue;
    total += static_cast<long double>(inter_[k]) / static_cast<long double>(uni_[k]);
    ++present;
  }
  return present == 0 ? 0.0 : static_cast<double>(total / static_cast<long double>(present));
}

double miou(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gt,
            std::size_t num_classes, std::size_t ignore_label) {
  IouAccumulator acc(num_classes, ignore_label);
  acc.add(pred, gt);
  return acc.mean();
}

double psnr_from_mse(double mse) {
  if (mse < 1e-10) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("psnr: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto a = pred.values();
  const auto b = target.values();
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  return psnr_from_mse(mse / static_cast<double>(a.size()));
}

}  // namespace pat
