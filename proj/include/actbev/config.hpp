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
 * @file config.hpp
 * @brief Run configuration (one JSON file plus dotted-key overrides) and the
 *        run manifest written next to every command's outputs.
 */

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "actbev/model.hpp"
#include "actbev/simworld.hpp"
#include "actbev/training.hpp"

namespace actbev::cli {

struct DataConfig {
  int n_train = 80;
  int n_val = 10;
  int n_test = 10;
};

struct EvalConfig {
  double epsilon = 0.01;
  double score_floor = 0.05;
  double nms_iou = 0.5;
  int n_car = 5;
  /// Route partner cameras through the simulated request/response exchange.
  bool use_exchange = true;
  /// Scene whose interest maps are exported (index into the test split).
  int map_scene = 0;
};

struct SweepConfig {
  int n_max = 5;
};

struct PathsConfig {
  std::string out = "out";
  /// Scene directory; empty means <out>/scenes.
  std::string scenes;
};

struct RunConfig {
  std::uint64_t seed = 0;
  sim::SceneConfig scene;
  DataConfig data;
  perception::ModelConfig model;
  perception::TrainConfig train;
  EvalConfig eval;
  SweepConfig sweep;
  PathsConfig paths;

  /// Every module precondition plus cross-section consistency; throws
  /// ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys and wrongly typed values
  /// throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);

  std::filesystem::path out_dir() const { return paths.out; }
  std::filesystem::path scene_dir() const;
};

/// Applies "a.b.c=value" to `j`. The value is parsed as JSON when possible
/// and taken as a string otherwise. Throws ConfigError on a malformed
/// override.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file (if any), then overrides, then validation.
RunConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// FNV-1a 64 of the compact dump; keys are sorted, so the hash does not
/// depend on key order in the source file.
std::string config_hash(const RunConfig& cfg);

std::string code_version();

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string code_version;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;  // relative to the output directory
  nlohmann::json config;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// UTC, ISO 8601.
std::string utc_timestamp();

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
/// Throws IoError on unreadable or malformed files.
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace actbev::cli
