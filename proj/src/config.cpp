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

#include "actbev/config.hpp"

#include <ctime>
#include <fstream>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "actbev/errors.hpp"

#ifndef ACTBEV_VERSION
#define ACTBEV_VERSION "unknown"
#endif

namespace actbev::cli {

namespace {

template <typename Fn>
void each_key(const nlohmann::json& j, const std::string& section, Fn fn) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!fn(key, value)) throw ConfigError("unknown " + section + " key '" + key + "'");
  }
}

}  // namespace

std::filesystem::path RunConfig::scene_dir() const {
  return paths.scenes.empty() ? std::filesystem::path(paths.out) / "scenes" : std::filesystem::path(paths.scenes);
}

void RunConfig::validate() const {
  scene.validate();
  model.validate();
  train.validate();
  if (data.n_train < 0 || data.n_val < 0 || data.n_test < 0) throw ConfigError("data split sizes must be >= 0");
  if (model.feature_h != scene.image_height || model.feature_w != scene.image_width) {
    throw ConfigError("model.feature_h/feature_w must equal scene.image_height/image_width");
  }
  if (model.raw_channels != 4) throw ConfigError("model.raw_channels must be 4 (ray-cast channel count)");
  if (!(eval.epsilon >= 0.0 && eval.epsilon < 1.0)) throw ConfigError("eval.epsilon must lie in [0, 1)");
  if (!(eval.score_floor >= 0.0 && eval.score_floor < 1.0)) throw ConfigError("eval.score_floor must lie in [0, 1)");
  if (!(eval.nms_iou > 0.0 && eval.nms_iou <= 1.0)) throw ConfigError("eval.nms_iou must lie in (0, 1]");
  if (eval.n_car < 1) throw ConfigError("eval.n_car must be >= 1");
  if (eval.map_scene < 0) throw ConfigError("eval.map_scene must be >= 0");
  if (sweep.n_max < 1) throw ConfigError("sweep.n_max must be >= 1");
  if (paths.out.empty()) throw ConfigError("paths.out must not be empty");
}

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"scene", scene.to_json()},
          {"data", {{"n_train", data.n_train}, {"n_val", data.n_val}, {"n_test", data.n_test}}},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"eval",
           {{"epsilon", eval.epsilon},
            {"score_floor", eval.score_floor},
            {"nms_iou", eval.nms_iou},
            {"n_car", eval.n_car},
            {"use_exchange", eval.use_exchange},
            {"map_scene", eval.map_scene}}},
          {"sweep", {{"n_max", sweep.n_max}}},
          {"paths", {{"out", paths.out}, {"scenes", paths.scenes}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    each_key(j, "config", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "scene") c.scene = sim::SceneConfig::from_json(v);
      else if (key == "model") c.model = perception::ModelConfig::from_json(v, c.model);
      else if (key == "train") c.train = perception::TrainConfig::from_json(v, c.train);
      else if (key == "data") {
        each_key(v, "data", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "n_train") c.data.n_train = x.get<int>();
          else if (k == "n_val") c.data.n_val = x.get<int>();
          else if (k == "n_test") c.data.n_test = x.get<int>();
          else return false;
          return true;
        });
      } else if (key == "eval") {
        each_key(v, "eval", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "epsilon") c.eval.epsilon = x.get<double>();
          else if (k == "score_floor") c.eval.score_floor = x.get<double>();
          else if (k == "nms_iou") c.eval.nms_iou = x.get<double>();
          else if (k == "n_car") c.eval.n_car = x.get<int>();
          else if (k == "use_exchange") c.eval.use_exchange = x.get<bool>();
          else if (k == "map_scene") c.eval.map_scene = x.get<int>();
          else return false;
          return true;
        });
      } else if (key == "sweep") {
        each_key(v, "sweep", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "n_max") c.sweep.n_max = x.get<int>();
          else return false;
          return true;
        });
      } else if (key == "paths") {
        each_key(v, "paths", [&](const std::string& k, const nlohmann::json& x) {
          if (k == "out") c.paths.out = x.get<std::string>();
          else if (k == "scenes") c.paths.scenes = x.get<std::string>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() || !node->contains(parts.back())) throw ConfigError("unknown config key '" + key + "'");
  (*node)[parts.back()] = value;
}

RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  nlohmann::json j = RunConfig().to_json();
  if (!file.empty()) {
    nlohmann::json f;
    try {
      f = read_json(file);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    if (!f.is_object()) throw ConfigError("config file must hold a JSON object");
    // Reject unknown keys before merging so they are reported by name.
    RunConfig::from_json(f);
    j.merge_patch(f);
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig cfg = RunConfig::from_json(j);
  cfg.validate();
  return cfg;
}

std::string config_hash(const RunConfig& cfg) {
  const std::string dump = cfg.to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string code_version() { return ACTBEV_VERSION; }

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},   {"config_hash", config_hash}, {"code_version", code_version},
          {"seed", seed},         {"started", started},         {"finished", finished},
          {"outputs", outputs},   {"config", config}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.config = j.at("config");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

std::string utc_timestamp() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace actbev::cli
