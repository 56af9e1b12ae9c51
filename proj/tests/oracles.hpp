#pragma once

// Reference implementations written directly from the definitions, kept
// independent of the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "pat/rng.hpp"
#include "pat/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const pat::Tensor& t) {
  const std::size_t rows = t.size(0), cols = t.size(1);
  Matrix m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t.value(r * cols + c);
  return m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> unit(std::vector<double> v) {
  const double n = std::sqrt(dot(v, v));
  if (n >= 1e-12)
    for (auto& x : v) x /= n;
  return v;
}

// Index of the code with the largest inner product, first one on ties.
inline std::size_t nearest_code(const Matrix& codes, const std::vector<double>& v) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < codes.size(); ++j) {
    const double s = dot(codes[j], v);
    if (s > best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

inline std::size_t cosine_nearest(const Matrix& codes, const std::vector<double>& v) {
  Matrix unit_codes;
  for (const auto& c : codes) unit_codes.push_back(unit(c));
  return nearest_code(unit_codes, unit(v));
}

// softmax(scale q k^T) v evaluated row by row.
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, double scale) {
  Matrix out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logits(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) logits[j] = scale * dot(q[i], k[j]);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[j].size(); ++c) out[i][c] += logits[j] / z * v[j][c];
  }
  return out;
}

struct Assignment {
  std::vector<std::size_t> column_of_row;
  double cost = std::numeric_limits<double>::infinity();
};

// Exhaustive minimum over all permutations of a square cost matrix.
inline Assignment brute_force_assignment(const Matrix& cost) {
  const std::size_t n = cost.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < n; ++r) c += cost[r][perm[r]];
    if (c < best.cost) {
      best.cost = c;
      best.column_of_row = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Mean over classes present in gt of |pred == k and gt == k| / |pred == k or gt == k|.
inline double mean_iou(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gt,
                       std::size_t classes, std::size_t ignore = 255) {
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t inter = 0, uni = 0, in_gt = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore) continue;
      const bool p = pred[i] == k, g = gt[i] == k;
      inter += p && g;
      uni += p || g;
      in_gt += g;
    }
    if (in_gt == 0) continue;
    total += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  return total / static_cast<double>(present);
}

inline pat::Tensor random_tensor(pat::Shape shape, pat::Rng& rng, double stddev = 1.0,
                                 bool requires_grad = false) {
  std::vector<double> v(pat::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return pat::Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

inline pat::Tensor uniform_tensor(pat::Shape shape, pat::Rng& rng, double lo, double hi,
                                  bool requires_grad = false) {
  std::vector<double> v(pat::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return pat::Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

// Random query rows whose best cosine to `features` beats the runner-up by at
// least `margin`, so a softmax at concentration kappa leaves residual weight
// of order exp(-kappa * margin) on the other features.
inline pat::Tensor separated_queries(const Matrix& features, std::size_t n, double margin,
                                     pat::Rng& rng) {
  std::vector<double> flat;
  const std::size_t d = features[0].size();
  while (flat.size() < n * d) {
    std::vector<double> q(d);
    for (auto& x : q) x = rng.normal();
    const auto u = unit(q);
    double best = -2.0, second = -2.0;
    for (const auto& f : features) {
      const double c = dot(unit(f), u);
      if (c > best) {
        second = best;
        best = c;
      } else if (c > second) {
        second = c;
      }
    }
    if (best - second >= margin) flat.insert(flat.end(), q.begin(), q.end());
  }
  return pat::Tensor::from_vector({n, d}, std::move(flat));
}

}  // namespace oracle
