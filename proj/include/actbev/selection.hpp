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
 * @file selection.hpp
 * @brief Active selection network: pose embedding of camera chains, per-query
 *        per-camera interest scores, threshold gating and map export.
 */

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "actbev/geometry.hpp"
#include "actbev/params.hpp"
#include "actbev/rng.hpp"
#include "actbev/tape.hpp"
#include "actbev/tensor.hpp"

namespace actbev::selection {

using nn::Tensor;
using nn::Var;

inline constexpr int kDefaultPoseDim = 256;
inline constexpr double kDefaultEpsilon = 0.01;
/// Translation entries are divided by this before embedding (BEV half-range).
inline constexpr double kDefaultPoseScale = 51.2;

struct SelectionParams {
  nn::LinearParams pe;    // 16 -> C_pe
  nn::LinearParams mlp1;  // C + C_pe -> hidden
  nn::LinearParams mlp2;  // hidden -> 1
  double pose_scale = kDefaultPoseScale;

  int pose_dim() const { return static_cast<int>(pe.out_features()); }
  int query_dim() const { return static_cast<int>(mlp1.in_features()) - pose_dim(); }
  void validate() const;

  /// Hidden width defaults to the query width.
  static SelectionParams init(int query_dim, int pose_dim, int hidden, Rng& rng, double pose_scale = kDefaultPoseScale);
  void store_into(nn::ParamStore& store, const std::string& prefix) const;
  static SelectionParams load_from(const nn::ParamStore& store, const std::string& prefix,
                                   double pose_scale = kDefaultPoseScale);
};

/// Row-major 16 entries of t with the translation column scaled by 1/pose_scale.
std::array<double, 16> pose_features(const geometry::HomTransform& t, double pose_scale);

/// PE(T): linear map of the normalized flattened transform.
std::vector<double> pose_embed(const geometry::HomTransform& t, const SelectionParams& params);

/// BEV map M_ki of interest scores for one camera, row-major [H, W]
/// (row = y_idx, column = x_idx).
struct InterestScoreMap {
  int car_id = 0;
  int cam_id = 0;
  int h = 0;
  int w = 0;
  std::vector<double> scores;

  double at(int x_idx, int y_idx) const { return scores[static_cast<std::size_t>(y_idx * w + x_idx)]; }
};

struct CameraChain {
  geometry::CameraKey key;
  geometry::HomTransform ego_from_cam;  // T'_k * T_i
};

/// Scores sigma(MLP(concat(q, PE(T)))) for every cell of `query_features`
/// ([H*W, C], the query plus positional embedding) and every chain.
std::vector<InterestScoreMap> interest_scores(const Tensor& query_features, int h, int w,
                                              const std::vector<CameraChain>& chains, const SelectionParams& params);

/// Tape-bound selection parameters.
struct SelectionVars {
  Var pe_w, pe_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b;
  int query_dim = 0;
  int pose_dim = 0;
  double pose_scale = kDefaultPoseScale;

  static SelectionVars bind(const nn::BoundParams& p, const std::string& prefix, int query_dim, int pose_dim,
                            double pose_scale = kDefaultPoseScale);
};

/// Batched differentiable scores [N, G] for N queries and G chains.
Var interest_scores(const Var& query_features, const std::vector<geometry::HomTransform>& chains,
                    const SelectionVars& vars);

/// mask(q, k, i) = score > epsilon (strict).
struct ActiveMask {
  int car_id = 0;
  int cam_id = 0;
  std::vector<char> active;  // same layout as InterestScoreMap::scores
};

/// Throws std::invalid_argument unless 0 <= epsilon < 1.
std::vector<ActiveMask> gate(const std::vector<InterestScoreMap>& scores, double epsilon = kDefaultEpsilon);

/// Per-car display map: camera maps of the same car summed and clipped to
/// [0, 1].
struct CarInterestMap {
  int car_id = 0;
  std::vector<int> cam_ids;
  int h = 0;
  int w = 0;
  std::vector<double> values;
};
std::vector<CarInterestMap> combine_by_car(const std::vector<InterestScoreMap>& scores);

/// Writes `layer<L>_car<K>.csv` per car plus entries in `interest_manifest.json`
/// (appending to an existing manifest). Returns the written CSV paths.
std::vector<std::filesystem::path> export_interest_maps(const std::vector<InterestScoreMap>& scores, int layer_idx,
                                                        const std::filesystem::path& dir);

/// Reads one exported CSV grid back.
std::vector<std::vector<double>> read_grid_csv(const std::filesystem::path& path);

}  // namespace actbev::selection
