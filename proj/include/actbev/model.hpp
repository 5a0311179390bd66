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
 * @file model.hpp
 * @brief Collaborative BEV encoder (self-attention, selective cross-attention
 *        and feed-forward per layer), per-cell detection head and set loss.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actbev/attention.hpp"
#include "actbev/boxes.hpp"
#include "actbev/geometry.hpp"
#include "actbev/hungarian.hpp"
#include "actbev/params.hpp"
#include "actbev/selection.hpp"
#include "actbev/tape.hpp"

namespace actbev::perception {

using attention::GateCounters;
using attention::GateMode;
using nn::Tensor;
using nn::Var;

struct ModelConfig {
  geometry::BevGrid grid;
  int channels = 32;
  int raw_channels = 4;
  /// Camera feature-map size; sets the shape of the per-pixel camera embedding.
  int feature_h = 32;
  int feature_w = 32;
  int n_head = 2;
  int n_key = 4;
  int n_layers = 3;
  int pose_dim = selection::kDefaultPoseDim;
  int selection_hidden = 32;
  int ffn_hidden = 64;
  double pose_scale = selection::kDefaultPoseScale;
  /// Initial class probability; sets the classification bias.
  double class_prior = 0.01;
  /// Initial selection logit bias.
  double selection_bias = 2.0;

  /// Throws ConfigError on violated preconditions.
  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from `base` and overrides present keys; unknown keys throw.
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig base);
  static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig()); }
};

/// Throws ConfigError when `params` lacks a tensor of `cfg`'s model or holds
/// one with a different shape.
void check_compatible(const nn::ParamStore& params, const ModelConfig& cfg);

/// Parameter names: stem, cam_embed, query_embed, pos_embed, layer<l>.{self, norm1, cross,
/// norm2, ffn1, ffn2, norm3, select}, head.{cls, reg}.
nn::ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

std::string layer_prefix(int layer);

/// Inputs seen by the ego: participating rigs, poses in the ego frame and raw
/// camera channels [H_f, W_f, raw_channels]. Partner channels may be absent
/// when their contributions come through a RemoteHook.
struct ModelInput {
  int ego_id = 0;
  std::vector<geometry::CameraRig> rigs;
  geometry::AgentPoses poses;
  attention::FeatureSet raw;
};

struct LayerVars {
  attention::AttnVars self;
  attention::AttnVars cross;
  selection::SelectionVars select;
  Var norm1_g, norm1_b, norm2_g, norm2_b, norm3_g, norm3_b;
  Var ffn1_w, ffn1_b, ffn2_w, ffn2_b;
};

struct ModelVars {
  Var stem_w, stem_b, cam_embed, query, pos;
  std::vector<LayerVars> layers;
  Var cls_w, cls_b, reg_w, reg_b;

  static ModelVars bind(const nn::BoundParams& p, const ModelConfig& cfg);
};

/// One remotely evaluated (query, partner camera) term of a PSA layer.
struct RemoteRequest {
  std::uint32_t query = 0;
  geometry::CameraKey key;
  std::vector<attention::RefPoint> refs;
  std::vector<double> offsets;  // Nh*Nk*2
  std::vector<double> weights;  // Nh*Nk
};

/// Supplies sum_j sum_m sum_n A V(p_j + dp)[m] (C values per request, before
/// gating, normalization and the output projection) for partner cameras.
class RemoteHook {
 public:
  virtual ~RemoteHook() = default;
  virtual std::vector<std::vector<double>> fetch(int layer, const std::vector<RemoteRequest>& requests) = 0;
};

struct EncodeOptions {
  GateMode mode = GateMode::Soft;
  double epsilon = 0.0;
  RemoteHook* remote = nullptr;
};

struct LayerStats {
  std::vector<geometry::CameraKey> cameras;
  /// [Q, G] interest scores (unbound in ForceOne mode).
  Var scores;
  /// [Q, G] 1 where camera g is in the geometric hit set of query q.
  Tensor hit_mask;
  GateCounters counters;
};

struct Encoded {
  Var bev;  // [H*W, C]
  std::vector<LayerStats> layers;
  GateCounters totals;
};

/// Differentiable encoder. Throws std::invalid_argument when a locally
/// evaluated camera has no raw channels.
Encoded encode_bev(nn::Tape& tape, const ModelVars& vars, const ModelConfig& cfg, const ModelInput& input,
                   const EncodeOptions& options);

/// Value-only result of encode_bev.
struct EncodedBev {
  Tensor bev;
  std::vector<std::vector<geometry::CameraKey>> cameras;
  std::vector<Tensor> scores;  // per layer, empty in ForceOne mode
  std::vector<Tensor> hit_masks;  // per layer [Q, max(G, 1)]
  std::vector<GateCounters> counters;
  GateCounters totals;
};
EncodedBev encode_bev(const nn::ParamStore& params, const ModelConfig& cfg, const ModelInput& input,
                      const EncodeOptions& options);

/// Dense multi-agent encoder assembled from the single-query routines: every
/// layer applies self-attention, then the sum over cars of each car's
/// spatial cross-attention, then the feed-forward block.
Tensor encode_bev_dense(const nn::ParamStore& params, const ModelConfig& cfg, const ModelInput& input);

/// Per-cell head: classification C -> 1 and regression C -> 5
/// (dcx, dcy, log l, log w, yaw), centers relative to the cell center.
struct DetHeadParams {
  nn::LinearParams cls;
  nn::LinearParams reg;

  static DetHeadParams load_from(const nn::ParamStore& store);
};

struct HeadOutput {
  Var logits;  // [Q, 1]
  Var reg;     // [Q, 5]
};
HeadOutput head(const Var& bev, const ModelVars& vars);

/// Center of the box predicted by a cell: cell center + half a cell times
/// tanh of the raw offsets, so it stays inside the cell.
DetectionBox decode_cell(const geometry::BevGrid& grid, int flat_cell, double logit, std::span<const double> reg);

/// Boxes of all cells with score > score_floor, after NMS.
std::vector<DetectionBox> decode(const Tensor& logits, const Tensor& reg, const geometry::BevGrid& grid,
                                 double score_floor, double nms_iou = 0.5);
std::vector<DetectionBox> detect(const Tensor& bev, const DetHeadParams& params, const geometry::BevGrid& grid,
                                 double score_floor, double nms_iou = 0.5);

struct LossConfig {
  double center_cost = 1.0;  // per meter, L1
  double class_cost = 1.0;
  double reg_weight = 1.0;
  double bg_weight = 1.0;

  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j, LossConfig base);
  static LossConfig from_json(const nlohmann::json& j) { return from_json(j, LossConfig()); }
};

struct LossResult {
  Var loss;
  /// gt_to_cell[g] = matched flat cell.
  std::vector<int> gt_to_cell;
  double class_loss = 0.0;
  double reg_loss = 0.0;
};

/// Hungarian matching of ground truth to cells on L1 center distance plus
/// class cost; BCE over all cells (matched cells positive) plus L1 on matched
/// box parameters, both divided by max(1, number of ground truth boxes).
LossResult match_and_loss(const HeadOutput& out, const std::vector<DetectionBox>& gts,
                          const geometry::BevGrid& grid, const LossConfig& cfg);

/// Yaw difference folded into [-pi/2, pi/2) (boxes are symmetric under a half turn).
double wrap_half_turn(double d);

}  // namespace actbev::perception
