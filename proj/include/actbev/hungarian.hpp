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

#pragma once
/// Minimum-cost rectangular assignment (Kuhn-Munkres with potentials).

#include <vector>

#include "actbev/tensor.hpp"

namespace actbev::perception {

struct Assignment {
  /// row_to_col[r] = assigned column, or -1 when rows > cols and r is left out.
  std::vector<int> row_to_col;
  double cost = 0.0;
};

/// cost: [rows, cols]. Every row is assigned when rows <= cols, every column
/// otherwise. Throws std::invalid_argument on non-finite costs.
Assignment solve_assignment(const nn::Tensor& cost);
Assignment solve_assignment(const std::vector<std::vector<double>>& cost);

}  // namespace actbev::perception
