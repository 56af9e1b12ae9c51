#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pat/config.hpp"
#include "pat/decoder.hpp"
#include "pat/hungarian.hpp"
#include "pat/tensor.hpp"

namespace pat {

constexpr std::size_t kIgnoreLabel = 255;

// Mean squared difference of per-position feature norms over horizontal and
// vertical neighbour pairs of a [C x H x W] map.
Tensor tv_loss(const Tensor& map);

// Mean over 4-neighbour pairs of w_ij (1 - cos(f_i, f_j)), with bilateral
// weights w_ij = exp(-|I_i - I_j|^2 / (2 sigma^2)) from an image of the same
// extent as the map.
Tensor crf_loss(const Tensor& map, const Tensor& image, double sigma);

// Fixed, seeded three-layer conv feature extractor used as the perceptual
// distance. Its weights never require gradients.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = 7);
  std::vector<Tensor> features(const Tensor& image) const;

 private:
  std::vector<Tensor> weights_;
  std::vector<std::size_t> strides_;
};

struct ReconTerms {
  Tensor l1, l2, perceptual;
};

ReconTerms recon_losses(const Tensor& pred, const Tensor& target,
                        const PerceptualExtractor& extractor);

struct SegTerms {
  Tensor class_ce, mask_bce, mask_dice;
  MatchResult match;
  std::vector<std::size_t> target_classes;
};

// labels: one id per mask position (row-major, extent of the masks), with
// kIgnoreLabel skipped. Throws DataError on ids outside [0, num_classes).
SegTerms seg_loss(const SegOutput& seg, const std::vector<std::size_t>& labels,
                  std::size_t num_classes, const LossConfig& config);

// Hungarian cost between queries and target masks: lambda_ce * CE +
// lambda_bce * BCE + lambda_dice * Dice, computed on plain values.
std::vector<double> matching_cost(const std::vector<double>& mask_logits,
                                  const std::vector<double>& class_logits, std::size_t queries,
                                  std::size_t classes_with_void, std::size_t positions,
                                  const std::vector<std::vector<double>>& target_masks,
                                  const std::vector<std::size_t>& target_classes,
                                  const LossConfig& config);

struct LossGroups {
  double vq = 0.0, spatial = 0.0, recon = 0.0, seg = 0.0;
};

// Weighted sum of loss groups.
double total_loss(const LossGroups& groups, const LossConfig& config);
Tensor total_loss(const Tensor& vq, const Tensor& spatial, const Tensor& recon,
                  const Tensor& seg, const LossConfig& config);

struct LossReport {
  std::map<std::string, double> terms;  // vq, tv, crf, l1, l2, perceptual, mask_bce, ...
  LossGroups groups;
  double total = 0.0;
  Tensor total_tensor;  // differentiable total
};

}  // namespace pat
