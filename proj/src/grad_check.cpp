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

#include "actbev/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "actbev/rng.hpp"

namespace actbev::nn {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const LossFn& fn, const std::vector<Tensor>& params, double h,
                           std::size_t max_probes_per_param, std::uint64_t seed) {
  std::vector<Tensor> analytic;
  fn(params, &analytic);
  GradCheckResult result;
  std::vector<Tensor> probe = params;
  Rng rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::size_t> idx(params[p].numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_probes_per_param > 0 && idx.size() > max_probes_per_param) {
      for (std::size_t i = 0; i < max_probes_per_param; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      }
      idx.resize(max_probes_per_param);
    }
    for (auto i : idx) {
      const double orig = probe[p][i];
      probe[p][i] = orig + h;
      const double up = fn(probe, nullptr);
      probe[p][i] = orig - h;
      const double down = fn(probe, nullptr);
      probe[p][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double err = relative_error(a, numeric);
      ++result.probes;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        result.worst_param = p;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

LossFn tape_loss(std::function<Var(Tape&, const std::vector<Var>&)> build) {
  return [build = std::move(build)](const std::vector<Tensor>& params, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.leaf(p, grads != nullptr));
    Var out = build(tape, vars);
    const double value = out.value()[0];
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return value;
  };
}

}  // namespace actbev::nn
