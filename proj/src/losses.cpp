#include "pat/losses.hpp"

#include <algorithm>
#include <cmath>

#include "pat/error.hpp"
#include "pat/ops.hpp"
#include "pat/rng.hpp"

namespace pat {

namespace {

using detail::Node;

struct Pair {
  std::size_t i, j;
};

std::vector<Pair> neighbour_pairs(std::size_t h, std::size_t w) {
  std::vector<Pair> pairs;
  pairs.reserve(2 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) pairs.push_back({y * w + x, y * w + x + 1});
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) pairs.push_back({y * w + x, (y + 1) * w + x});
  return pairs;
}

double stable_sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

Tensor tv_loss(const Tensor& map) {
  if (map.rank() != 3) throw DimensionError("tv_loss expects [C x H x W], got " + shape_str(map.shape()));
  const std::size_t c = map.size(0), h = map.size(1), w = map.size(2), hw = h * w;
  const auto pairs = neighbour_pairs(h, w);
  const auto xv = map.values();
  std::vector<double> norms(hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) norms[p] += xv[ch * hw + p] * xv[ch * hw + p];
  for (auto& n : norms) n = std::sqrt(n);
  if (pairs.empty()) return detail::make_result("tv_loss", {1}, {0.0}, {map}, nullptr);
  const double inv = 1.0 / static_cast<double>(pairs.size());
  double loss = 0.0;
  for (const auto& pr : pairs) {
    const double d = norms[pr.i] - norms[pr.j];
    loss += d * d;
  }
  return detail::make_result(
      "tv_loss", {1}, {loss * inv}, {map}, [pairs, norms, inv, c, hw](Node& self) {
        Node& a = *self.inputs[0];
        if (!a.requires_grad) return;
        std::vector<double> dn(hw, 0.0);
        for (const auto& pr : pairs) {
          const double d = 2.0 * (norms[pr.i] - norms[pr.j]) * inv * self.grad[0];
          dn[pr.i] += d;
          dn[pr.j] -= d;
        }
        auto& g = a.grad_buffer();
        for (std::size_t p = 0; p < hw; ++p) {
          if (norms[p] < 1e-12) continue;
          for (std::size_t ch = 0; ch < c; ++ch) g[ch * hw + p] += dn[p] * a.data[ch * hw + p] / norms[p];
        }
      });
}

Tensor crf_loss(const Tensor& map, const Tensor& image, double sigma) {
  if (map.rank() != 3 || image.rank() != 3 || map.size(1) != image.size(1) ||
      map.size(2) != image.size(2)) {
    throw DimensionError("crf_loss: map " + shape_str(map.shape()) + " and image " +
                         shape_str(image.shape()) + " differ in extent");
  }
  if (sigma <= 0.0) throw ConfigError("crf_loss: sigma must be positive");
  const std::size_t h = map.size(1), w = map.size(2), hw = h * w;
  const std::size_t ic = image.size(0);
  const auto pairs = neighbour_pairs(h, w);
  const Tensor units = l2_normalize(map_to_tokens(map), 1);  // [HW x C]
  if (pairs.empty()) return detail::make_result("crf_loss", {1}, {0.0}, {units}, nullptr);
  const std::size_t c = units.size(1);
  const auto iv = image.values();
  std::vector<double> weights(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    double dist = 0.0;
    for (std::size_t ch = 0; ch < ic; ++ch) {
      const double d = iv[ch * hw + pairs[k].i] - iv[ch * hw + pairs[k].j];
      dist += d * d;
    }
    weights[k] = std::exp(-dist / (2.0 * sigma * sigma));
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  const auto uv = units.values();
  double loss = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    double dot = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) dot += uv[pairs[k].i * c + ch] * uv[pairs[k].j * c + ch];
    loss += weights[k] * (1.0 - dot);
  }
  return detail::make_result(
      "crf_loss", {1}, {loss * inv}, {units}, [pairs, weights, inv, c](Node& self) {
        Node& a = *self.inputs[0];
        if (!a.requires_grad) return;
        auto& g = a.grad_buffer();
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          const double s = -weights[k] * inv * self.grad[0];
          for (std::size_t ch = 0; ch < c; ++ch) {
            g[pairs[k].i * c + ch] += s * a.data[pairs[k].j * c + ch];
            g[pairs[k].j * c + ch] += s * a.data[pairs[k].i * c + ch];
          }
        }
      });
}

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t chans[4] = {3, 8, 16, 16};
  strides_ = {1, 2, 2};
  for (std::size_t l = 0; l < 3; ++l) {
    const Shape shape{chans[l + 1], chans[l], 3, 3};
    const double stddev = std::sqrt(2.0 / static_cast<double>(chans[l] * 9));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = rng.normal(0.0, stddev);
    weights_.push_back(Tensor::from_vector(shape, std::move(values)));
  }
}

std::vector<Tensor> PerceptualExtractor::features(const Tensor& image) const {
  std::vector<Tensor> out;
  Tensor h = image;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = gelu(conv2d(h, weights_[l], Tensor(), strides_[l], 1));
    out.push_back(h);
  }
  return out;
}

ReconTerms recon_losses(const Tensor& pred, const Tensor& target,
                        const PerceptualExtractor& extractor) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("recon_losses: prediction " + shape_str(pred.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  ReconTerms out;
  const Tensor diff = sub(pred, target);
  out.l1 = mean(abs(diff));
  out.l2 = mean(square(diff));
  std::vector<Tensor> target_features;
  {
    NoGradGuard no_grad;
    target_features = extractor.features(target);
  }
  const auto pred_features = extractor.features(pred);
  Tensor acc;
  for (std::size_t l = 0; l < pred_features.size(); ++l) {
    const Tensor term = mean(square(sub(pred_features[l], target_features[l])));
    acc = acc.defined() ? add(acc, term) : term;
  }
  out.perceptual = scale(acc, 1.0 / static_cast<double>(pred_features.size()));
  return out;
}

std::vector<double> matching_cost(const std::vector<double>& mask_logits,
                                  const std::vector<double>& class_logits, std::size_t queries,
                                  std::size_t classes_with_void, std::size_t positions,
                                  const std::vector<std::vector<double>>& target_masks,
                                  const std::vector<std::size_t>& target_classes,
                                  const LossConfig& config) {
  const std::size_t nt = target_classes.size();
  const std::size_t kc = classes_with_void;
  std::vector<double> cost(queries * nt, 0.0);
  for (std::size_t q = 0; q < queries; ++q) {
    double mx = class_logits[q * kc];
    for (std::size_t k = 1; k < kc; ++k) mx = std::max(mx, class_logits[q * kc + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < kc; ++k) z += std::exp(class_logits[q * kc + k] - mx);
    const double log_z = mx + std::log(z);
    std::vector<double> logit(positions), sig(positions);
    double sig_sum = 0.0;
    for (std::size_t p = 0; p < positions; ++p) {
      logit[p] = std::clamp(mask_logits[q * positions + p], -config.bce_clamp, config.bce_clamp);
      sig[p] = stable_sigmoid(logit[p]);
      sig_sum += sig[p];
    }
    for (std::size_t t = 0; t < nt; ++t) {
      const auto& target = target_masks[t];
      double bce = 0.0, inter = 0.0, tsum = 0.0;
      for (std::size_t p = 0; p < positions; ++p) {
        const double zq = logit[p];
        bce += std::max(zq, 0.0) - zq * target[p] + std::log1p(std::exp(-std::fabs(zq)));
        inter += sig[p] * target[p];
        tsum += target[p];
      }
      bce /= static_cast<double>(positions);
      const double dice = 1.0 - (2.0 * inter + 1.0) / (sig_sum + tsum + 1.0);
      const double ce = log_z - class_logits[q * kc + target_classes[t]];
      cost[q * nt + t] =
          config.lambda_ce * ce + config.lambda_bce * bce + config.lambda_dice * dice;
    }
  }
  return cost;
}

SegTerms seg_loss(const SegOutput& seg, const std::vector<std::size_t>& labels,
                  std::size_t num_classes, const LossConfig& config) {
  const std::size_t nq = seg.mask_logits.size(0);
  const std::size_t hw = seg.mask_logits.size(1);
  const std::size_t kc = seg.class_logits.size(1);
  if (labels.size() != hw) {
    throw DimensionError("seg_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(hw) + " mask positions");
  }
  if (kc != num_classes + 1 || seg.class_logits.size(0) != nq) {
    throw DimensionError("seg_loss: class logits " + shape_str(seg.class_logits.shape()) +
                         " do not match " + std::to_string(num_classes) + " classes + void");
  }
  std::vector<std::size_t> valid;
  std::vector<bool> present(num_classes, false);
  for (std::size_t p = 0; p < hw; ++p) {
    if (labels[p] == kIgnoreLabel) continue;
    if (labels[p] >= num_classes) {
      throw DataError("label id " + std::to_string(labels[p]) + " outside the class table of " +
                      std::to_string(num_classes));
    }
    present[labels[p]] = true;
    valid.push_back(p);
  }
  const std::size_t nv = valid.size();

  SegTerms out;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (present[k]) out.target_classes.push_back(k);
  }
  const std::size_t nt = out.target_classes.size();
  std::vector<std::vector<double>> targets(nt, std::vector<double>(nv, 0.0));
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t v = 0; v < nv; ++v) targets[t][v] = labels[valid[v]] == out.target_classes[t] ? 1.0 : 0.0;

  Tensor masks = seg.mask_logits;
  if (nv != hw) {
    std::vector<double> select(hw * nv, 0.0);
    for (std::size_t v = 0; v < nv; ++v) select[valid[v] * nv + v] = 1.0;
    masks = matmul(masks, Tensor::from_vector({hw, nv}, std::move(select)));
  }

  const auto cost = matching_cost(detach(masks).to_vector(), detach(seg.class_logits).to_vector(),
                                  nq, kc, nv, targets, out.target_classes, config);
  out.match = hungarian(cost, nq, nt);

  std::vector<std::size_t> query_class(nq, num_classes);
  std::vector<double> weights(nq, config.no_object_weight);
  for (const auto& [q, t] : out.match.pairs) {
    query_class[q] = out.target_classes[t];
    weights[q] = 1.0;
  }
  out.class_ce = cross_entropy(seg.class_logits, query_class, weights);

  if (out.match.pairs.empty() || nv == 0) {
    out.mask_bce = Tensor::scalar(0.0);
    out.mask_dice = Tensor::scalar(0.0);
    return out;
  }
  const std::size_t np = out.match.pairs.size();
  std::vector<std::size_t> rows;
  std::vector<double> tvals, tsum(np, 0.0);
  tvals.reserve(np * nv);
  for (std::size_t i = 0; i < np; ++i) {
    rows.push_back(out.match.pairs[i].first);
    const auto& tm = targets[out.match.pairs[i].second];
    tvals.insert(tvals.end(), tm.begin(), tm.end());
    for (double v : tm) tsum[i] += v;
  }
  const Tensor target = Tensor::from_vector({np, nv}, std::move(tvals));
  const Tensor matched = clamp(matmul(one_hot(rows, nq), masks), -config.bce_clamp, config.bce_clamp);
  out.mask_bce = bce_with_logits(matched, target);
  const Tensor probs = sigmoid(matched);
  const Tensor inter = sum_axis(mul(probs, target), 1);
  const Tensor denom = add(sum_axis(probs, 1), Tensor::from_vector({np}, tsum));
  const Tensor ratio = div(add_scalar(scale(inter, 2.0), 1.0), add_scalar(denom, 1.0));
  out.mask_dice = mean(add_scalar(scale(ratio, -1.0), 1.0));
  return out;
}

double total_loss(const LossGroups& g, const LossConfig& c) {
  return c.vq_weight * g.vq + c.spatial_weight * g.spatial + c.recon_weight * g.recon +
         c.seg_weight * g.seg;
}

Tensor total_loss(const Tensor& vq, const Tensor& spatial, const Tensor& recon, const Tensor& seg,
                  const LossConfig& c) {
  return add(add(scale(vq, c.vq_weight), scale(spatial, c.spatial_weight)),
             add(scale(recon, c.recon_weight), scale(seg, c.seg_weight)));
}

}  // namespace pat
