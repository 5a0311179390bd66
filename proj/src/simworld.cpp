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

#include "actbev/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "actbev/errors.hpp"
#include "actbev/ops.hpp"
#include "actbev/rng.hpp"

namespace actbev::sim {

using geometry::Vec3;

Layout parse_layout(const std::string& s) {
  if (s == "grid") return Layout::Grid;
  if (s == "intersection") return Layout::Intersection;
  throw ConfigError("unknown scene layout '" + s + "'");
}

std::string to_string(Layout layout) { return layout == Layout::Grid ? "grid" : "intersection"; }

const Agent& Scene::agent(int id) const {
  for (const auto& a : agents) {
    if (a.id == id) return a;
  }
  throw std::out_of_range("no agent with id " + std::to_string(id));
}

std::vector<geometry::CameraRig> Scene::all_rigs() const {
  std::vector<geometry::CameraRig> out;
  for (const auto& a : agents) out.insert(out.end(), a.rigs.begin(), a.rigs.end());
  return out;
}

geometry::AgentPoses Scene::poses_in_frame_of(int ego_id) const {
  const HomTransform ego_from_world = geometry::invert(agent(ego_id).pose);
  geometry::AgentPoses poses;
  for (const auto& a : agents) poses[a.id] = geometry::compose(ego_from_world, a.pose);
  return poses;
}

void SceneConfig::validate() const {
  if (n_objects < 0) throw ConfigError("scene.n_objects must be >= 0");
  if (n_agents < 1) throw ConfigError("scene.n_agents must be >= 1");
  if (cams_per_agent < 1 || cams_per_agent > 6) throw ConfigError("scene.cams_per_agent must lie in [1, 6]");
  if (!(world_half_extent > 0.0) || !(agent_half_extent > 0.0)) throw ConfigError("scene extents must be positive");
  if (!(road_half_width > width_max)) throw ConfigError("scene.road_half_width too narrow for objects");
  if (min_agent_distance < 0.0 || agent_object_clearance < 0.0 || object_gap < 0.0) {
    throw ConfigError("scene distances must be non-negative");
  }
  if (!(length_min > 0.0 && length_min <= length_max && width_min > 0.0 && width_min <= width_max)) {
    throw ConfigError("scene object size ranges are invalid");
  }
  if (!(object_height > 0.0) || !(camera_height > 0.0)) throw ConfigError("scene heights must be positive");
  if (image_width < 2 || image_height < 2) throw ConfigError("scene image size must be at least 2x2");
  if (!(fov_rad > 0.0 && fov_rad < std::numbers::pi)) throw ConfigError("scene.fov_rad must lie in (0, pi)");
  if (max_attempts < 1) throw ConfigError("scene.max_attempts must be >= 1");
}

nlohmann::json SceneConfig::to_json() const {
  return {{"n_objects", n_objects},
          {"n_agents", n_agents},
          {"cams_per_agent", cams_per_agent},
          {"layout", to_string(layout)},
          {"world_half_extent", world_half_extent},
          {"agent_half_extent", agent_half_extent},
          {"road_half_width", road_half_width},
          {"min_agent_distance", min_agent_distance},
          {"agent_object_clearance", agent_object_clearance},
          {"object_gap", object_gap},
          {"length_min", length_min},
          {"length_max", length_max},
          {"width_min", width_min},
          {"width_max", width_max},
          {"object_height", object_height},
          {"camera_height", camera_height},
          {"image_width", image_width},
          {"image_height", image_height},
          {"fov_rad", fov_rad},
          {"max_attempts", max_attempts}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_objects") c.n_objects = value.get<int>();
    else if (key == "n_agents") c.n_agents = value.get<int>();
    else if (key == "cams_per_agent") c.cams_per_agent = value.get<int>();
    else if (key == "layout") c.layout = parse_layout(value.get<std::string>());
    else if (key == "world_half_extent") c.world_half_extent = value.get<double>();
    else if (key == "agent_half_extent") c.agent_half_extent = value.get<double>();
    else if (key == "road_half_width") c.road_half_width = value.get<double>();
    else if (key == "min_agent_distance") c.min_agent_distance = value.get<double>();
    else if (key == "agent_object_clearance") c.agent_object_clearance = value.get<double>();
    else if (key == "object_gap") c.object_gap = value.get<double>();
    else if (key == "length_min") c.length_min = value.get<double>();
    else if (key == "length_max") c.length_max = value.get<double>();
    else if (key == "width_min") c.width_min = value.get<double>();
    else if (key == "width_max") c.width_max = value.get<double>();
    else if (key == "object_height") c.object_height = value.get<double>();
    else if (key == "camera_height") c.camera_height = value.get<double>();
    else if (key == "image_width") c.image_width = value.get<int>();
    else if (key == "image_height") c.image_height = value.get<int>();
    else if (key == "fov_rad") c.fov_rad = value.get<double>();
    else if (key == "max_attempts") c.max_attempts = value.get<int>();
    else throw ConfigError("unknown scene key '" + key + "'");
  }
  return c;
}

geometry::CameraRig make_rig(int car_id, int cam_id, int n_cams, double height,
                             const geometry::CameraIntrinsics& intrinsics) {
  const double yaw = 2.0 * std::numbers::pi * cam_id / n_cams;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  geometry::Mat3 r;
  // Columns: camera x (right), y (down), z (forward) in the car frame.
  r.col(0) = Vec3(s, -c, 0.0);
  r.col(1) = Vec3(0.0, 0.0, -1.0);
  r.col(2) = Vec3(c, s, 0.0);
  geometry::CameraRig rig;
  rig.car_id = car_id;
  rig.cam_id = cam_id;
  rig.extrinsic = HomTransform::from_rotation_translation(r, Vec3(0.0, 0.0, height));
  rig.intrinsics = intrinsics;
  return rig;
}

namespace {

struct Placement {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

Placement sample_pose(Rng& rng, const SceneConfig& cfg, double half_extent, double lateral_margin) {
  if (cfg.layout == Layout::Grid) {
    return {rng.uniform(-half_extent, half_extent), rng.uniform(-half_extent, half_extent),
            rng.uniform(-std::numbers::pi, std::numbers::pi)};
  }
  const bool along_x = rng.below(2) == 0;
  const double along = rng.uniform(-half_extent, half_extent);
  const double lateral = rng.uniform(-cfg.road_half_width + lateral_margin, cfg.road_half_width - lateral_margin);
  const double flip = rng.below(2) == 0 ? 0.0 : std::numbers::pi;
  if (along_x) return {along, lateral, flip};
  return {lateral, along, 0.5 * std::numbers::pi + flip};
}

double half_diagonal(double l, double w) { return 0.5 * std::hypot(l, w); }

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  const auto intrinsics = geometry::CameraIntrinsics::from_fov(cfg.image_width, cfg.image_height, cfg.fov_rad);

  for (int a = 0; a < cfg.n_agents; ++a) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const Placement p = sample_pose(rng, cfg, cfg.agent_half_extent, 0.5 * cfg.width_max);
      bool ok = true;
      for (const auto& other : scene.agents) {
        const Vec3 t = other.pose.translation();
        if (std::hypot(t.x() - p.x, t.y() - p.y) < cfg.min_agent_distance) ok = false;
      }
      if (!ok) continue;
      Agent agent;
      agent.id = a;
      agent.pose = HomTransform::from_yaw(p.yaw, Vec3(p.x, p.y, 0.0));
      for (int c = 0; c < cfg.cams_per_agent; ++c) {
        agent.rigs.push_back(make_rig(a, c, cfg.cams_per_agent, cfg.camera_height, intrinsics));
      }
      scene.agents.push_back(std::move(agent));
      placed = true;
    }
    if (!placed) throw ConfigError("could not place agent " + std::to_string(a) + " within the attempt budget");
  }

  for (int o = 0; o < cfg.n_objects; ++o) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const double length = rng.uniform(cfg.length_min, cfg.length_max);
      const double width = rng.uniform(cfg.width_min, cfg.width_max);
      const Placement p = sample_pose(rng, cfg, cfg.world_half_extent - 0.5 * length, 0.5 * width);
      const double r = half_diagonal(length, width);
      bool ok = true;
      for (const auto& a : scene.agents) {
        const Vec3 t = a.pose.translation();
        if (std::hypot(t.x() - p.x, t.y() - p.y) < r + cfg.agent_object_clearance) ok = false;
      }
      for (const auto& other : scene.objects) {
        const Vec3 t = other.pose.translation();
        if (std::hypot(t.x() - p.x, t.y() - p.y) < r + half_diagonal(other.length, other.width) + cfg.object_gap) {
          ok = false;
        }
      }
      if (!ok) continue;
      scene.objects.push_back({o, HomTransform::from_yaw(p.yaw, Vec3(p.x, p.y, 0.0)), length, width,
                               cfg.object_height});
      placed = true;
    }
    if (!placed) throw ConfigError("could not place object " + std::to_string(o) + " within the attempt budget");
  }
  return scene;
}

std::optional<RayHit> intersect_box(const Vec3& origin, const Vec3& dir, const SceneObject& obj) {
  const geometry::Mat3 rt = obj.pose.rotation().transpose();
  const Vec3 o = rt * (origin - obj.pose.translation());
  const Vec3 d = rt * dir;
  const double lo[3] = {-0.5 * obj.length, -0.5 * obj.width, 0.0};
  const double hi[3] = {0.5 * obj.length, 0.5 * obj.width, obj.height};
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  RayHit hit;
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < lo[k] || o[k] > hi[k]) return std::nullopt;
      continue;
    }
    double t0 = (lo[k] - o[k]) / d[k];
    double t1 = (hi[k] - o[k]) / d[k];
    // Entering through the low face means the outward normal points to -k.
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > t_enter) {
      t_enter = t0;
      hit.axis = k;
      hit.sign = sign;
    }
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit || t_enter <= 0.0) return std::nullopt;
  hit.t = t_enter;
  return hit;
}

double object_hash(int object_id) {
  const std::uint64_t h = hash64(static_cast<std::uint64_t>(object_id) + 0x51ed270b27fULL);
  return 0.5 + 0.5 * static_cast<double>(h >> 11) * 0x1.0p-53;
}

RawChannels raycast_channels(const Scene& scene, const geometry::CameraRig& rig) {
  const Agent& agent = scene.agent(rig.car_id);
  const bool known = std::any_of(agent.rigs.begin(), agent.rigs.end(),
                                 [&](const geometry::CameraRig& r) { return r.cam_id == rig.cam_id; });
  if (!known) throw std::invalid_argument("rig does not belong to the scene");
  const auto& k = rig.intrinsics;
  k.validate();
  const HomTransform world_from_cam = geometry::compose(agent.pose, rig.extrinsic);
  const geometry::Mat3 r = world_from_cam.rotation();
  const Vec3 origin = world_from_cam.translation();
  RawChannels out{rig.key(), Tensor({static_cast<std::size_t>(k.height), static_cast<std::size_t>(k.width),
                                     static_cast<std::size_t>(kRawChannels)})};
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      // Camera-frame direction with unit z, so the ray parameter is the depth.
      const Vec3 d = r * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const SceneObject* nearest = nullptr;
      RayHit best;
      best.t = std::numeric_limits<double>::infinity();
      for (const auto& obj : scene.objects) {
        const auto h = intersect_box(origin, d, obj);
        if (h && h->t < best.t) {
          best = *h;
          nearest = &obj;
        }
      }
      if (!nearest) continue;
      double* px = out.data.data() + (static_cast<std::size_t>(v) * k.width + u) * kRawChannels;
      px[0] = 1.0 / best.t;
      px[1] = 1.0;
      if (best.axis == 2) {
        px[2] = 0.0;
      } else {
        const Vec3 n_obj = best.axis == 0 ? Vec3(best.sign, 0.0, 0.0) : Vec3(0.0, best.sign, 0.0);
        const Vec3 n = nearest->pose.rotation() * n_obj;
        px[2] = std::atan2(n.y(), n.x()) / std::numbers::pi;
      }
      px[3] = object_hash(nearest->id);
    }
  }
  return out;
}

Tensor feature_stem(const Tensor& raw, const nn::LinearParams& params) {
  if (raw.rank() != 3 || raw.dim(2) != params.in_features()) {
    throw std::invalid_argument("feature_stem: raw channels " + nn::shape_str(raw.shape()) + " do not match stem input");
  }
  const std::size_t h = raw.dim(0), w = raw.dim(1), cin = raw.dim(2), cout = params.out_features();
  Tensor out({h, w, cout});
  for (std::size_t p = 0; p < h * w; ++p) {
    const double* x = raw.data() + p * cin;
    double* y = out.data() + p * cout;
    for (std::size_t o = 0; o < cout; ++o) {
      double s = params.bias[o];
      for (std::size_t i = 0; i < cin; ++i) s += params.weight.at(o, i) * x[i];
      y[o] = s;
    }
  }
  return out;
}

nn::Var feature_stem(const nn::Var& raw, const nn::Var& weight, const nn::Var& bias) {
  return nn::linear(raw, weight, bias);
}

std::vector<perception::DetectionBox> ground_truth(const Scene& scene, int ego_id, const geometry::BevGrid& grid) {
  const HomTransform ego_from_world = geometry::invert(scene.agent(ego_id).pose);
  std::vector<perception::DetectionBox> out;
  for (const auto& obj : scene.objects) {
    const HomTransform p = geometry::compose(ego_from_world, obj.pose);
    const Vec3 t = p.translation();
    if (!grid.contains(t.x(), t.y())) continue;
    out.push_back({t.x(), t.y(), obj.length, obj.width, p.yaw(), 1.0});
  }
  return out;
}

nlohmann::json transform_to_json(const HomTransform& t) { return t.row_major(); }

HomTransform transform_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw IoError("transform must be an array of 16 numbers");
  std::array<double, 16> v{};
  for (std::size_t i = 0; i < 16; ++i) v[i] = j[i].get<double>();
  return HomTransform::from_row_major(v);
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    objects.push_back({{"id", o.id},
                       {"pose", transform_to_json(o.pose)},
                       {"length", o.length},
                       {"width", o.width},
                       {"height", o.height}});
  }
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : scene.agents) {
    nlohmann::json rigs = nlohmann::json::array();
    for (const auto& r : a.rigs) {
      const auto& k = r.intrinsics;
      rigs.push_back({{"cam_id", r.cam_id},
                      {"extrinsic", transform_to_json(r.extrinsic)},
                      {"intrinsics",
                       {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}}}});
    }
    agents.push_back({{"id", a.id}, {"pose", transform_to_json(a.pose)}, {"rigs", rigs}});
  }
  return {{"schema_version", kSceneSchemaVersion},
          {"seed", scene.seed},
          {"timestamp", scene.timestamp},
          {"objects", objects},
          {"agents", agents}};
}

Scene scene_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSceneSchemaVersion) throw IoError("unsupported scene schema version");
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.timestamp = j.at("timestamp").get<double>();
    for (const auto& o : j.at("objects")) {
      s.objects.push_back({o.at("id").get<int>(), transform_from_json(o.at("pose")), o.at("length").get<double>(),
                           o.at("width").get<double>(), o.at("height").get<double>()});
    }
    for (const auto& a : j.at("agents")) {
      Agent agent;
      agent.id = a.at("id").get<int>();
      agent.pose = transform_from_json(a.at("pose"));
      for (const auto& r : a.at("rigs")) {
        geometry::CameraRig rig;
        rig.car_id = agent.id;
        rig.cam_id = r.at("cam_id").get<int>();
        rig.extrinsic = transform_from_json(r.at("extrinsic"));
        const auto& k = r.at("intrinsics");
        rig.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                          k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
        agent.rigs.push_back(rig);
      }
      for (const auto& other : s.agents) {
        if (other.id == agent.id) throw IoError("duplicate agent id " + std::to_string(agent.id));
      }
      s.agents.push_back(std::move(agent));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed scene file: ") + e.what());
  } catch (const GeometryError& e) {
    throw IoError(std::string("invalid transform in scene file: ") + e.what());
  }
}

void save_scene(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << scene_to_json(scene).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

}  // namespace actbev::sim
