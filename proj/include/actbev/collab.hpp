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
 * @file collab.hpp
 * @brief Multi-agent protocol: pose broadcast, active request planning,
 *        simulated request/response exchange with byte accounting, the
 *        communication report and the agent-count sweep.
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "actbev/attention.hpp"
#include "actbev/geometry.hpp"
#include "actbev/metrics.hpp"
#include "actbev/model.hpp"
#include "actbev/selection.hpp"
#include "actbev/simworld.hpp"
#include "actbev/training.hpp"

namespace actbev::collab {

using geometry::CameraKey;
using nn::Tensor;

/// Malformed message, unknown partner or payload size mismatch.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

// ---------------------------------------------------------------- poses

struct PoseEntry {
  int agent_id = 0;
  geometry::HomTransform world_from_car;
  std::vector<geometry::CameraRig> rigs;
};

struct PoseTable {
  std::vector<PoseEntry> agents;  // ascending agent id

  bool contains(int agent_id) const;
  /// Throws ProtocolError for an unknown agent.
  const PoseEntry& at(int agent_id) const;
  /// Poses of the listed agents in the frame of `ego_id`.
  geometry::AgentPoses poses_in_frame_of(int ego_id, const std::vector<int>& agent_ids) const;
  std::vector<geometry::CameraRig> rigs_of(const std::vector<int>& agent_ids) const;
  /// Entries of the listed agents only, in ascending id.
  PoseTable subset(const std::vector<int>& agent_ids) const;
  /// agents x (16 + rigs x (16 + 4)) x 8.
  std::uint64_t payload_bytes() const;
};

/// Throws std::invalid_argument when the scene has no agents.
PoseTable broadcast_poses(const sim::Scene& scene);

/// Per agent: 16 pose doubles, then per rig 16 extrinsic doubles and
/// fx, fy, cx, cy. Ids, image sizes and counts are agreed out of band (they
/// are fixed by the rig configuration), so the byte count equals
/// payload_bytes().
Bytes serialize_pose_table(const PoseTable& table);
/// Inverse of serialize_pose_table given the agreed layout `shape`.
PoseTable deserialize_pose_table(std::span<const std::uint8_t> bytes, const PoseTable& shape);

// ---------------------------------------------------------------- planning

struct PlanItem {
  std::uint32_t query = 0;
  std::vector<attention::RefPoint> refs;
};

struct CameraPlan {
  CameraKey key;
  std::vector<PlanItem> items;  // ascending query
};

/// Wire requests of one layer: active (query, partner camera) pairs inside
/// the per-car hit set. Ego cameras are served locally and never listed, but
/// they count in dense_pairs / active_pairs.
struct QueryRequestPlan {
  std::vector<CameraPlan> cameras;  // ascending (car_id, cam_id)
  std::uint64_t dense_pairs = 0;
  std::uint64_t active_pairs = 0;

  std::size_t size() const;
};

/// One mask per camera of every car in `agent_ids` (which must include the
/// ego). Throws std::invalid_argument on a missing or wrongly sized mask.
QueryRequestPlan plan_requests(const std::vector<selection::ActiveMask>& masks, const geometry::BevGrid& grid,
                               const PoseTable& poses, int ego_id, const std::vector<int>& agent_ids);

// ---------------------------------------------------------------- messages

struct RequestEntry {
  std::int32_t cam_id = 0;
  std::uint32_t query = 0;
  std::vector<attention::RefPoint> refs;
  std::vector<double> offsets;  // n_head * n_key * 2
  std::vector<double> weights;  // n_head * n_key
};

/// Everything the ego asks one partner car for in one layer.
struct RequestMessage {
  std::int32_t layer = 0;
  std::int32_t car_id = 0;
  std::int32_t n_head = 0;
  std::int32_t n_key = 0;
  std::vector<RequestEntry> entries;
};

Bytes encode_request(const RequestMessage& msg);
/// Throws ProtocolError on truncated or inconsistent input.
RequestMessage decode_request(std::span<const std::uint8_t> bytes);

/// Responses are C doubles per request entry, in request order, with no
/// framing: the ego already knows the entry count and width.
Bytes encode_response(const std::vector<std::vector<double>>& values);
std::vector<std::vector<double>> decode_response(std::span<const std::uint8_t> bytes, std::size_t entries,
                                                 std::size_t channels);

// ---------------------------------------------------------------- partners

/// A partner car: holds its own camera channels and its copy of the model,
/// answers requests with sum_j sum_m sum_n A V'(p_j + dp)[m] per entry.
class Partner {
 public:
  Partner(int car_id, const nn::ParamStore& params, const perception::ModelConfig& cfg,
          attention::FeatureSet raw);

  int car_id() const { return car_id_; }
  Bytes respond(std::span<const std::uint8_t> request);

 private:
  const Tensor& value_map(int layer, int cam_id);

  int car_id_;
  const nn::ParamStore* params_;
  perception::ModelConfig cfg_;
  attention::FeatureSet raw_;
  std::map<int, Tensor> features_;                  // cam -> stem output
  std::map<std::pair<int, int>, Tensor> values_;    // (layer, cam)
};

struct Traffic {
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t messages = 0;
  std::uint64_t entries = 0;
};

/// In-process transport. Requests of one layer are grouped per partner car in
/// (car_id, cam_id, query) order, serialized, answered (partners may run
/// concurrently) and merged back in that fixed order.
class Exchange : public perception::RemoteHook {
 public:
  /// Answers are `channels` wide; requests carry n_head * n_key samples.
  Exchange(std::size_t channels, int n_head, int n_key) : channels_(channels), n_head_(n_head), n_key_(n_key) {}

  void add_partner(std::shared_ptr<Partner> partner);
  std::vector<std::vector<double>> fetch(int layer, const std::vector<perception::RemoteRequest>& requests) override;

  const Traffic& traffic() const { return traffic_; }

 private:
  std::size_t channels_;
  int n_head_;
  int n_key_;
  std::map<int, std::shared_ptr<Partner>> partners_;
  Traffic traffic_;
};

// ---------------------------------------------------------------- accounting

/// Interactions of one layer: dense hit set and active mask per camera.
struct LayerInteraction {
  std::vector<CameraKey> cameras;
  Tensor hit_mask;                              // [Q, max(G, 1)]
  std::vector<selection::ActiveMask> masks;     // one per camera, [Q]
};

struct CommReport {
  std::uint64_t n_ori = 0;
  std::uint64_t n_act = 0;
  std::uint64_t pruned = 0;
  double p_ratio = 1.0;
  /// BEV cells with at least one active pair, summed over layers.
  std::uint64_t active_cells = 0;
  std::uint64_t total_cells = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t pose_bytes = 0;
  /// Bytes to ship every partner camera's feature map once instead.
  std::uint64_t full_map_bytes = 0;

  /// Adds counts and recomputes p_ratio.
  void accumulate(const CommReport& other);
  nlohmann::json to_json() const;
};

/// Counts over layers: n_ori = hit pairs, n_act = hit pairs with mask true.
/// p_ratio = n_act / n_ori, and 1 when there are no pairs.
CommReport comm_report(const std::vector<LayerInteraction>& layers);

/// Per-camera score maps of one encoded layer (empty in ForceOne mode).
std::vector<selection::InterestScoreMap> score_maps(const perception::EncodedBev& enc, int layer,
                                                    const geometry::BevGrid& grid);

/// Masks implied by an inference run: score > epsilon in Hard mode, all true
/// otherwise.
std::vector<LayerInteraction> interactions(const perception::EncodedBev& enc, const geometry::BevGrid& grid,
                                           attention::GateMode mode, double epsilon);

// ---------------------------------------------------------------- evaluation

struct EvalOptions {
  attention::GateMode mode = attention::GateMode::Hard;
  double epsilon = selection::kDefaultEpsilon;
  int n_car = 5;
  double score_floor = 0.05;
  double nms_iou = 0.5;
  /// Route partner cameras through Exchange (otherwise computed locally).
  bool use_exchange = true;
};

struct EvalSummary {
  int n_car = 0;
  perception::EvalResult iou;
  perception::EvalResult center;
  CommReport comm;
};

/// Inference on every (scene, ego) of `data` with participants_for(ego,
/// n_car). Throws std::invalid_argument on an empty dataset and ConfigError
/// on a checkpoint that does not fit `cfg`.
EvalSummary evaluate(const nn::ParamStore& params, const perception::ModelConfig& cfg,
                     const perception::Dataset& data, const EvalOptions& options);

/// One frame: the encoded BEV plus its communication report.
struct FrameResult {
  perception::EncodedBev enc;
  CommReport comm;
};
FrameResult run_frame(const nn::ParamStore& params, const perception::ModelConfig& cfg, const sim::Scene& scene,
                      const attention::FeatureSet& raw, int ego_id, const EvalOptions& options);

struct SweepRow {
  int n_car = 0;
  double ap50 = 0.0;
  double ap70 = 0.0;
  double cd_map = 0.0;
  CommReport comm;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // n_car = 1..N_max

  nlohmann::json to_json() const;
  /// Columns n_car, ap50, ap70, cd_map, n_ori, n_act, p_ratio, bytes_up, bytes_down.
  void write_csv(const std::filesystem::path& path) const;
  /// Columns n_car, pct_queries, ap50, ap70.
  void write_plot_data(const std::filesystem::path& path) const;
};

SweepResult run_sweep(const nn::ParamStore& params, const perception::ModelConfig& cfg,
                      const perception::Dataset& data, int n_max, EvalOptions options);

}  // namespace actbev::collab
