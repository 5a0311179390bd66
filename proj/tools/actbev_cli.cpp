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

// actbev: scene generation, training, evaluation, agent-count sweeps and
// reports. Exit codes: 0 ok, 1 other failure, 2 config error, 3 I/O error,
// 4 numerical divergence, 5 protocol error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "actbev/commands.hpp"
#include "actbev/errors.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kNumerical = 4, kProtocol = 5 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  bool baseline = false;
  std::optional<double> epsilon;
  std::optional<int> n_max;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Run seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--set", f.overrides, "Config override key=value (dotted key), repeatable");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative BEV perception with pose-guided query selection"};
  app.require_subcommand(1);
  Flags f;
  auto* gen = app.add_subcommand("gen-scenes", "Generate train/val/test scene files");
  auto* train = app.add_subcommand("train", "Train the active model or the dense co-baseline");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  auto* sweep = app.add_subcommand("sweep", "Agent-count sweep on the test split");
  auto* report = app.add_subcommand("report", "Summarize metric and sweep files");
  for (auto* c : {gen, train, eval, sweep, report}) add_common(c, f);
  for (auto* c : {train, eval, sweep}) {
    c->add_option("--checkpoint", f.checkpoint, "Checkpoint path");
    c->add_flag("--baseline", f.baseline, "Dense co-baseline (all interest scores 1)");
  }
  for (auto* c : {eval, sweep}) c->add_option("--epsilon", f.epsilon, "Inference gate threshold");
  sweep->add_option("--n-max", f.n_max, "Largest collaboration size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    std::vector<std::string> overrides = f.overrides;
    if (f.seed) overrides.push_back(fmt::format("seed={}", *f.seed));
    if (!f.out.empty()) overrides.push_back("paths.out=" + nlohmann::json(f.out).dump());
    if (f.epsilon) overrides.push_back(fmt::format("eval.epsilon={:.17g}", *f.epsilon));
    if (f.n_max) overrides.push_back(fmt::format("sweep.n_max={}", *f.n_max));
    const auto cfg = actbev::cli::load_config(f.config, overrides);
    actbev::cli::CommandOptions opts;
    opts.checkpoint = f.checkpoint;
    opts.baseline = f.baseline;

    actbev::cli::RunManifest m;
    if (gen->parsed()) m = actbev::cli::cmd_gen_scenes(cfg);
    else if (train->parsed()) m = actbev::cli::cmd_train(cfg, opts);
    else if (eval->parsed()) m = actbev::cli::cmd_eval(cfg, opts);
    else if (sweep->parsed()) m = actbev::cli::cmd_sweep(cfg, opts);
    else m = actbev::cli::cmd_report(cfg);
    std::cout << fmt::format("{}: wrote {} files to {} (config {})\n", m.command, m.outputs.size(), cfg.paths.out,
                             m.config_hash);
    return kOk;
  } catch (const actbev::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const actbev::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const actbev::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const actbev::collab::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return kProtocol;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
