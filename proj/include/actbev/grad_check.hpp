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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "actbev/tape.hpp"
#include "actbev/tensor.hpp"

namespace actbev::nn {

/// Scalar function of a parameter list. When `grads` is non-null the function
/// must also fill it with analytic gradients (one tensor per parameter).
using LossFn = std::function<double(const std::vector<Tensor>& params, std::vector<Tensor>* grads)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probes = 0;
};

/// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

/// Compares analytic gradients against central differences
/// (f(θ+h) - f(θ-h)) / 2h. With max_probes_per_param > 0 only a seeded random
/// subset of each parameter's entries is probed.
GradCheckResult grad_check(const LossFn& fn, const std::vector<Tensor>& params, double h = 1e-5,
                           std::size_t max_probes_per_param = 0, std::uint64_t seed = 0);

/// Adapts a tape-built scalar into a LossFn: params become grad-requiring
/// leaves, `build` returns the scalar output.
LossFn tape_loss(std::function<Var(Tape&, const std::vector<Var>&)> build);

}  // namespace actbev::nn
