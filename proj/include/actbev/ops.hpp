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
/// Differentiable tensor operations recorded on a Tape.
///
/// Matrix-shaped operations treat a tensor as rows x cols, where cols is the
/// trailing dimension and rows is everything before it.

#include <cstddef>
#include <vector>

#include "actbev/tape.hpp"
#include "actbev/tensor.hpp"

namespace actbev::nn {

/// y = x W^T + b. x: [.., C_in], W: [C_out, C_in], b: [C_out].
Var linear(const Var& x, const Var& w, const Var& b);
/// y = x W^T.
Var linear(const Var& x, const Var& w);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
/// Softmax over consecutive groups of `group` entries along the last axis
/// (the last axis length must be a multiple of `group`).
Var softmax(const Var& x, std::size_t group);
/// Normalizes each row over the trailing dimension.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var reshape(const Var& x, Shape shape);

/// Scalar sum of all entries.
Var sum(const Var& x);
Var mean(const Var& x);
/// Scalar sum_i w_i x_i with a constant weight tensor.
Var weighted_sum(const Var& x, const Tensor& w);

/// Row-wise concat of [N, A] and [N, B] into [N, A + B].
Var concat_cols(const Var& a, const Var& b);
/// out[p * G + g] = a[p] + b[g] for a: [P, H], b: [G, H]; result [P * G, H].
Var pairwise_add(const Var& a, const Var& b);
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);
/// Columns [begin, begin + count) of a matrix-shaped tensor.
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);

/// Sum of weighted binary cross-entropy on logits; targets and weights are
/// constants with the same element count as logits.
Var bce_with_logits(const Var& logits, const Tensor& targets, const Tensor& weights);

/// Bilinear sampling of f: [H, W, C] at continuous positions pos: [N, 2]
/// holding (u, v) with f[i, j] located at (u = j, v = i). Corners outside the
/// map contribute zero (border-zero padding). Result [N, C].
Var bilinear_sample(const Var& f, const Var& pos);

namespace detail {

/// out[c] += weight * f(u, v)[c_begin + c] for c < c_count.
void bilinear_accumulate(const double* f, int h, int w, int channels, int c_begin, int c_count, double u,
                         double v, double weight, double* out);

/// Backward of bilinear_accumulate for an upstream gradient `gout`
/// (length c_count). Adds into df (may be null) and returns
/// (d/du, d/dv) of dot(gout, weight * f(u, v)).
struct PositionGrad {
  double du = 0.0;
  double dv = 0.0;
};
PositionGrad bilinear_backward(const double* f, double* df, int h, int w, int channels, int c_begin, int c_count,
                               double u, double v, double weight, const double* gout);

}  // namespace detail

}  // namespace actbev::nn
