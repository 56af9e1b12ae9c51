#include "pat/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pat/error.hpp"

namespace pat {

long MatchResult::column_of(std::size_t row) const {
  for (const auto& [r, c] : pairs) {
    if (r == row) return static_cast<long>(c);
  }
  return -1;
}

namespace {

// Requires n <= m. Returns for each row its column.
std::vector<std::size_t> solve(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

MatchResult hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) {
    throw DimensionError("hungarian: cost has " + std::to_string(cost.size()) +
                         " entries for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " matrix");
  }
  for (double c : cost) {
    if (!std::isfinite(c)) throw DataError("hungarian: cost matrix has a non-finite entry");
  }
  MatchResult out;
  if (rows == 0 || cols == 0) return out;
  if (rows <= cols) {
    const auto assign = solve(cost, rows, cols);
    for (std::size_t r = 0; r < rows; ++r) out.pairs.emplace_back(r, assign[r]);
  } else {
    std::vector<double> t(cost.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = cost[r * cols + c];
    const auto assign = solve(t, cols, rows);
    for (std::size_t c = 0; c < cols; ++c) out.pairs.emplace_back(assign[c], c);
    std::sort(out.pairs.begin(), out.pairs.end());
  }
  for (const auto& [r, c] : out.pairs) out.cost += cost[r * cols + c];
  return out;
}

MatchResult hungarian(const Tensor& cost) {
  if (cost.rank() != 2) {
    throw DimensionError("hungarian: cost must be 2-D, got " + shape_str(cost.shape()));
  }
  return hungarian(cost.to_vector(), cost.size(0), cost.size(1));
}

}  // namespace pat
