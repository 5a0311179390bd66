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
 * @file simworld.hpp
 * @brief Deterministic planar scenes with box-shaped vehicles, multi-camera
 *        agents and ray-cast per-camera channels.
 */

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actbev/boxes.hpp"
#include "actbev/geometry.hpp"
#include "actbev/params.hpp"
#include "actbev/tape.hpp"
#include "actbev/tensor.hpp"

namespace actbev::sim {

using geometry::HomTransform;
using nn::Tensor;

inline constexpr int kRawChannels = 4;
inline constexpr int kSceneSchemaVersion = 1;

enum class Layout { Grid, Intersection };
Layout parse_layout(const std::string& s);
std::string to_string(Layout layout);

struct SceneObject {
  int id = 0;
  HomTransform pose;  // world_from_object; box spans z in [0, height]
  double length = 4.5;
  double width = 1.9;
  double height = 1.5;
};

struct Agent {
  int id = 0;
  HomTransform pose;  // world_from_car
  std::vector<geometry::CameraRig> rigs;
};

struct Scene {
  std::uint64_t seed = 0;
  double timestamp = 0.0;
  std::vector<SceneObject> objects;
  std::vector<Agent> agents;

  /// Throws std::out_of_range for an unknown id.
  const Agent& agent(int id) const;
  /// Rigs of all agents, in agent order.
  std::vector<geometry::CameraRig> all_rigs() const;
  /// ego_from_car for every agent.
  geometry::AgentPoses poses_in_frame_of(int ego_id) const;
};

struct SceneConfig {
  int n_objects = 20;
  int n_agents = 5;
  int cams_per_agent = 2;
  Layout layout = Layout::Intersection;
  double world_half_extent = 60.0;   // objects live in [-e, e]^2
  double agent_half_extent = 30.0;   // agents live in [-a, a]^2
  double road_half_width = 7.0;      // intersection layout
  double min_agent_distance = 10.0;
  double agent_object_clearance = 4.0;
  double object_gap = 0.5;
  double length_min = 3.8, length_max = 5.0;
  double width_min = 1.7, width_max = 2.1;
  double object_height = 1.5;
  double camera_height = 2.0;
  int image_width = 32;
  int image_height = 32;
  double fov_rad = 1.5707963267948966;
  int max_attempts = 2000;

  /// Throws ConfigError on violated preconditions.
  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

/// Camera c of n looks along yaw 2*pi*c/n from the car origin, mounted at
/// `height` above the ground, optical axis horizontal.
geometry::CameraRig make_rig(int car_id, int cam_id, int n_cams, double height,
                             const geometry::CameraIntrinsics& intrinsics);

/// Throws ConfigError when placement fails after the configured attempts.
Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

/// [H_f, W_f, 4]: inverse depth (1 / camera z), hit flag, horizontal surface
/// normal azimuth / pi (0 on top faces), object hash in [0.5, 1).
struct RawChannels {
  geometry::CameraKey key;
  Tensor data;
};

/// Ray-box intersection of a world-frame ray with a scene object: entry
/// parameter t > 0 and the object-frame axis of the entered face (0: x,
/// 1: y, 2: z) with its sign. Absent on a miss or when the origin is inside.
struct RayHit {
  double t = 0.0;
  int axis = 0;
  double sign = 1.0;
};
std::optional<RayHit> intersect_box(const geometry::Vec3& origin, const geometry::Vec3& dir, const SceneObject& obj);

/// Object id to a hash value in [0.5, 1).
double object_hash(int object_id);

/// Throws std::invalid_argument when the rig does not belong to the scene.
RawChannels raycast_channels(const Scene& scene, const geometry::CameraRig& rig);

/// Per-pixel linear lift 4 -> C.
Tensor feature_stem(const Tensor& raw, const nn::LinearParams& params);
nn::Var feature_stem(const nn::Var& raw, const nn::Var& weight, const nn::Var& bias);

/// Objects inside the grid range, in the ego frame, unit score.
std::vector<perception::DetectionBox> ground_truth(const Scene& scene, int ego_id, const geometry::BevGrid& grid);

nlohmann::json transform_to_json(const HomTransform& t);
HomTransform transform_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const Scene& scene);
/// Throws IoError on a schema mismatch or malformed content.
Scene scene_from_json(const nlohmann::json& j);
void save_scene(const std::filesystem::path& path, const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

}  // namespace actbev::sim
