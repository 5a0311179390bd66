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
/**
 * @file attention.hpp
 * @brief Deformable attention, spatial cross-attention over hit cameras,
 *        pose-guided selective attention (PSA) and BEV self-attention.
 *
 * Two routes are provided:
 * - Single-query functions (dfm_attn, spatial_cross_attn, psa, ...) that
 *   operate on plain tensors; used as a public API and by the wire protocol.
 * - A fused, differentiable batched kernel (deform_gather) used by the
 *   encoder. Both evaluate the same sum; the single-query functions are built
 *   on the same per-entry gather routine.
 */

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actbev/geometry.hpp"
#include "actbev/params.hpp"
#include "actbev/rng.hpp"
#include "actbev/tape.hpp"
#include "actbev/tensor.hpp"

namespace actbev::attention {

using nn::Tensor;
using nn::Var;

/// Deformable attention parameters for one attention block.
///
/// Layouts (C channels, Dh = C / n_head):
/// - value_w  [C, C]: rows m*Dh .. (m+1)*Dh-1 hold W'_m (C -> Dh).
/// - output_w [C, C]: columns m*Dh .. (m+1)*Dh-1 hold W_m (Dh -> C).
/// - offset_w [Nh*Nk*2, C], offset_b: row (m*Nk + n)*2 + {0: du, 1: dv}.
/// - weight_w [Nh*Nk, C], weight_b: row m*Nk + n, softmax over n per head.
struct DfmAttnParams {
  int n_head = 2;
  int n_key = 4;
  Tensor value_w;
  Tensor output_w;
  Tensor offset_w;
  Tensor offset_b;
  Tensor weight_w;
  Tensor weight_b;

  int channels() const { return static_cast<int>(value_w.dim(0)); }
  int head_dim() const { return channels() / n_head; }
  /// Throws std::invalid_argument on inconsistent shapes or C % n_head != 0.
  void validate() const;

  /// Projections uniform in +-sqrt(1/C); offset predictor zeroed so that
  /// initial samples sit on the reference point.
  static DfmAttnParams init(int channels, int n_head, int n_key, Rng& rng);
  void store_into(nn::ParamStore& store, const std::string& prefix) const;
  static DfmAttnParams load_from(const nn::ParamStore& store, const std::string& prefix, int n_head, int n_key);
};

struct FeatureMap {
  int car_id = 0;
  int cam_id = 0;
  Tensor data;  // [H_f, W_f, C]

  int height() const { return static_cast<int>(data.dim(0)); }
  int width() const { return static_cast<int>(data.dim(1)); }
  int channels() const { return static_cast<int>(data.dim(2)); }
};

/// Grid-shaped BEV queries Q [H, W, C] with a positional embedding of the
/// same shape.
struct BevQueries {
  Tensor grid;
  Tensor pos;

  int h() const { return static_cast<int>(grid.dim(0)); }
  int w() const { return static_cast<int>(grid.dim(1)); }
  int channels() const { return static_cast<int>(grid.dim(2)); }
  /// Q(x, y) + pos(x, y).
  std::vector<double> query_with_pos(geometry::BevCell c) const;
};

using Vec = std::vector<double>;

/// Per-query predicted sampling offsets (Nh*Nk*2) and softmax weights
/// (Nh*Nk) for one attention block.
struct QueryPrediction {
  Vec offsets;
  Vec weights;
};
QueryPrediction predict(std::span<const double> q, const DfmAttnParams& params);

/// Value map W' F for every pixel: [H_f, W_f, C].
Tensor value_map(const Tensor& features, const DfmAttnParams& params);

struct RefPoint {
  double u = 0.0;
  double v = 0.0;
};

/// sum_j sum_m sum_n A_mn V(p_j + dp_mn)[head m block] into `out` (length C,
/// accumulated). `value` is [H_f, W_f, C].
void gather_entry(const Tensor& value, int n_head, int n_key, std::span<const double> offsets,
                  std::span<const double> weights, std::span<const RefPoint> refs, std::span<double> out);

/// Deformable attention for one query at reference point p.
Vec dfm_attn(std::span<const double> q, RefPoint p, const Tensor& features, const DfmAttnParams& params);

/// dfm_attn at the j-th pillar point of `cell` projected into camera `rig`
/// through T'_k * T_i. Out-of-view reference points contribute zero.
Vec per_camera_attn(std::span<const double> q, geometry::BevCell cell, int ref_j, const geometry::BevGrid& grid,
                    const geometry::CameraRig& rig, const geometry::AgentPoses& poses, const Tensor& features,
                    const DfmAttnParams& params);

using FeatureSet = std::map<geometry::CameraKey, Tensor>;
using InterestLookup = std::map<geometry::CameraKey, double>;

/// Single-car spatial cross-attention: mean over hit cameras of the pillar
/// sum. Empty hit set gives the zero vector.
Vec spatial_cross_attn(std::span<const double> q, geometry::BevCell cell, const geometry::BevGrid& grid,
                       const FeatureSet& features, const std::vector<geometry::CameraRig>& rigs,
                       const geometry::AgentPoses& poses, const DfmAttnParams& params);

enum class GateMode {
  Soft,      // multiply by the interest score (training)
  Hard,      // skip pairs with score <= epsilon (inference)
  ForceOne,  // every hit pair with weight 1 (dense co-baseline)
};

struct GateCounters {
  std::int64_t dense_pairs = 0;
  std::int64_t active_pairs = 0;
};

/// Pose-guided selective attention for one query. Normalization by the hit
/// count is applied per car. Throws std::invalid_argument when a hit pair has
/// no interest entry (except in ForceOne mode).
Vec psa(std::span<const double> q, geometry::BevCell cell, const geometry::BevGrid& grid, const FeatureSet& features,
        const InterestLookup& interest, const std::vector<geometry::CameraRig>& rigs,
        const geometry::AgentPoses& poses, const DfmAttnParams& params, GateMode mode = GateMode::Soft,
        double epsilon = 0.0, GateCounters* counters = nullptr);

/// Deformable self-attention over the BEV grid itself (reference point = own
/// cell, offsets in cells), residual-added: Q + DfmAttn(Q + pos, cell, Q).
BevQueries bev_self_attn(const BevQueries& queries, const DfmAttnParams& params);

// ---------------------------------------------------------------------------
// Batched route

/// Projected pillar points of every BEV cell into every camera.
class HitTable {
 public:
  struct Camera {
    geometry::CameraKey key;
    geometry::HomTransform ego_from_cam;
    geometry::CameraIntrinsics intrinsics;
  };
  struct Hit {
    std::uint32_t camera = 0;
    std::uint32_t ref_begin = 0;
    std::uint32_t ref_count = 0;
  };

  HitTable(const geometry::BevGrid& grid, const std::vector<geometry::CameraRig>& rigs,
           const geometry::AgentPoses& poses);

  const std::vector<Camera>& cameras() const { return cameras_; }
  std::size_t n_queries() const { return query_begin_.size() - 1; }
  std::span<const Hit> hits(std::size_t query) const {
    return {hits_.data() + query_begin_[query], query_begin_[query + 1] - query_begin_[query]};
  }
  std::span<const RefPoint> refs(const Hit& h) const { return {refs_.data() + h.ref_begin, h.ref_count}; }
  std::optional<std::size_t> camera_index(geometry::CameraKey key) const;

 private:
  std::vector<Camera> cameras_;
  std::vector<std::size_t> query_begin_;
  std::vector<Hit> hits_;
  std::vector<RefPoint> refs_;
};

/// One (query, source) term of the fused kernel.
struct SampleEntry {
  std::uint32_t query = 0;
  std::uint32_t source = 0;
  std::int32_t gate_col = -1;  // -1: gate fixed to 1
  double scale = 1.0;
  std::uint32_t ref_begin = 0;
  std::uint32_t ref_count = 0;
};

struct SamplePlan {
  std::vector<SampleEntry> entries;
  std::vector<RefPoint> refs;
  /// Entries whose contribution is supplied from outside (remote partners);
  /// empty means all entries are gathered locally.
  std::vector<char> external;
  /// External contributions, C values per entry (read only where external).
  std::vector<double> external_values;

  std::span<const RefPoint> entry_refs(const SampleEntry& e) const { return {refs.data() + e.ref_begin, e.ref_count}; }
};

struct ValueSource {
  Var map;  // [H_f * W_f, C] or [H_f, W_f, C]
  int h = 0;
  int w = 0;
};

/// Fused differentiable kernel:
///   out[q] += scale_e * gate[q, col_e] * sum_j sum_m sum_n A[q,m,n] V_e(p_j + dp[q,m,n])[m]
/// offsets: [Q, Nh*Nk*2], weights: [Q, Nh*Nk] (already normalized),
/// gates: [Q, G] or unbound. Returns [n_queries, C].
Var deform_gather(const std::vector<ValueSource>& sources, const Var& offsets, const Var& weights, const Var& gates,
                  const SamplePlan& plan, int n_head, int n_key, std::size_t n_queries);

/// Tape-bound attention block parameters.
struct AttnVars {
  int n_head = 2;
  int n_key = 4;
  Var value_w;
  Var output_w;
  Var offset_w;
  Var offset_b;
  Var weight_w;
  Var weight_b;

  static AttnVars bind(const nn::BoundParams& p, const std::string& prefix, int n_head, int n_key);
};

struct PredictionVars {
  Var offsets;
  Var weights;
};
PredictionVars predict(const Var& query_with_pos, const AttnVars& vars);

}  // namespace actbev::attention
