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
 * @file commands.hpp
 * @brief Batch commands behind the actbev executable. Each writes its files
 *        under the configured output directory plus a manifest listing them.
 */

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "actbev/collab.hpp"
#include "actbev/config.hpp"

namespace actbev::cli {

struct CommandOptions {
  /// Checkpoint path; default <out>/checkpoint.bin (baseline.bin with --baseline).
  std::filesystem::path checkpoint;
  /// Dense co-baseline (all interest scores forced to 1).
  bool baseline = false;
};

std::filesystem::path checkpoint_path(const RunConfig& cfg, const CommandOptions& opts);

/// Scene seed for index `index` of split `split` (0 train, 1 val, 2 test).
std::uint64_t scene_seed(std::uint64_t run_seed, int split, int index);

/// scenes/{train,val,test}/scene_XXXX.json. Returns the manifest.
RunManifest cmd_gen_scenes(const RunConfig& cfg);

/// Loads every scene file of a split (sorted by name). Throws IoError when
/// the split directory is missing.
std::vector<sim::Scene> load_split(const RunConfig& cfg, const std::string& split);

/// Trains the active model (soft gating) or, with opts.baseline, the dense
/// co-baseline. Writes the checkpoint and a per-step loss CSV.
RunManifest cmd_train(const RunConfig& cfg, const CommandOptions& opts);

/// Metrics of both families and the communication report on the test split,
/// plus per-layer interest maps of one test scene.
RunManifest cmd_eval(const RunConfig& cfg, const CommandOptions& opts);

/// Agent-count sweep on the test split: sweep.csv, sweep.json, plot_data.csv.
RunManifest cmd_sweep(const RunConfig& cfg, const CommandOptions& opts);

/// Collects the metric and sweep files present in the output directory into
/// report.json and report.md. Throws IoError when none exist.
RunManifest cmd_report(const RunConfig& cfg);

/// Evaluation options derived from the run config.
collab::EvalOptions eval_options(const RunConfig& cfg, bool baseline);

}  // namespace actbev::cli
