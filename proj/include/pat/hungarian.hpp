#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "pat/tensor.hpp"

namespace pat {

struct MatchResult {
  // (row, column) pairs sorted by row; min(rows, cols) of them.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double cost = 0.0;

  // Column matched to `row`, or -1.
  long column_of(std::size_t row) const;
};

// Minimum-cost one-to-one assignment (shortest augmenting paths with
// potentials, O(n^2 m)). `cost` is row-major rows x cols. Throws DataError on
// non-finite entries.
MatchResult hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols);
MatchResult hungarian(const Tensor& cost);

}  // namespace pat
