// Copyright 2026 The ActBEV Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "actbev/hungarian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace actbev::perception {

namespace {

// n <= m; a is 1-indexed as in the classic potentials formulation.
std::vector<int> solve_wide(const std::vector<std::vector<double>>& a, int n, int m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
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
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment solve_assignment(const std::vector<std::vector<double>>& cost) {
  Assignment out;
  const int rows = static_cast<int>(cost.size());
  if (rows == 0) return out;
  const int cols = static_cast<int>(cost[0].size());
  for (const auto& r : cost) {
    if (static_cast<int>(r.size()) != cols) throw std::invalid_argument("ragged cost matrix");
    for (double c : r) {
      if (!std::isfinite(c)) throw std::invalid_argument("non-finite assignment cost");
    }
  }
  out.row_to_col.assign(rows, -1);
  if (cols == 0) return out;
  if (rows <= cols) {
    out.row_to_col = solve_wide(cost, rows, cols);
  } else {
    std::vector<std::vector<double>> t(cols, std::vector<double>(rows));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) t[c][r] = cost[r][c];
    }
    const auto col_to_row = solve_wide(t, cols, rows);
    for (int c = 0; c < cols; ++c) out.row_to_col[col_to_row[c]] = c;
  }
  for (int r = 0; r < rows; ++r) {
    if (out.row_to_col[r] >= 0) out.cost += cost[r][out.row_to_col[r]];
  }
  return out;
}

Assignment solve_assignment(const nn::Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("cost matrix must be rank 2");
  std::vector<std::vector<double>> c(cost.dim(0), std::vector<double>(cost.dim(1)));
  for (std::size_t r = 0; r < cost.dim(0); ++r) {
    for (std::size_t k = 0; k < cost.dim(1); ++k) c[r][k] = cost.at(r, k);
  }
  return solve_assignment(c);
}

}  // namespace actbev::perception
