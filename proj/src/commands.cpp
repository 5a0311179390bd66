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

#include "actbev/commands.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "actbev/errors.hpp"
#include "actbev/params.hpp"

namespace actbev::cli {

namespace fs = std::filesystem;
using attention::GateMode;

namespace {

const char* const kSplits[3] = {"train", "val", "test"};

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string rel(const RunConfig& cfg, const fs::path& p) {
  return fs::relative(p, cfg.out_dir()).generic_string();
}

RunManifest start_manifest(const RunConfig& cfg, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.config_hash = config_hash(cfg);
  m.code_version = code_version();
  m.seed = cfg.seed;
  m.started = utc_timestamp();
  m.config = cfg.to_json();
  return m;
}

RunManifest finish(const RunConfig& cfg, RunManifest m) {
  m.finished = utc_timestamp();
  std::sort(m.outputs.begin(), m.outputs.end());
  make_dirs(cfg.out_dir());
  write_json(cfg.out_dir() / fmt::format("manifest_{}.json", m.command), m.to_json());
  return m;
}

std::string prefix(bool baseline) { return baseline ? "baseline_" : ""; }

nlohmann::json eval_json(const perception::EvalResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : r.per_threshold) {
    rows.push_back({{"threshold", t.threshold}, {"ap", t.ap}, {"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}});
  }
  return rows;
}

perception::Dataset load_dataset(const RunConfig& cfg, const std::string& split) {
  auto scenes = load_split(cfg, split);
  if (scenes.empty()) throw IoError("split '" + split + "' holds no scenes");
  return perception::Dataset::build(std::move(scenes));
}

nn::ParamStore load_model(const RunConfig& cfg, const CommandOptions& opts) {
  nlohmann::json meta;
  nn::ParamStore params = nn::load_checkpoint(checkpoint_path(cfg, opts), &meta);
  perception::check_compatible(params, cfg.model);
  if (meta.contains("mode")) {
    const std::string want = opts.baseline ? "baseline" : "active";
    if (meta["mode"] != want) {
      throw ConfigError(fmt::format("checkpoint was trained as '{}', the command asks for '{}'",
                                    meta["mode"].get<std::string>(), want));
    }
  }
  return params;
}

}  // namespace

fs::path checkpoint_path(const RunConfig& cfg, const CommandOptions& opts) {
  if (!opts.checkpoint.empty()) return opts.checkpoint;
  return cfg.out_dir() / (opts.baseline ? "baseline.bin" : "checkpoint.bin");
}

std::uint64_t scene_seed(std::uint64_t run_seed, int split, int index) {
  return run_seed * 1000003ULL + static_cast<std::uint64_t>(split) * 100000ULL + static_cast<std::uint64_t>(index);
}

collab::EvalOptions eval_options(const RunConfig& cfg, bool baseline) {
  collab::EvalOptions o;
  o.mode = baseline ? GateMode::ForceOne : GateMode::Hard;
  o.epsilon = cfg.eval.epsilon;
  o.n_car = cfg.eval.n_car;
  o.score_floor = cfg.eval.score_floor;
  o.nms_iou = cfg.eval.nms_iou;
  o.use_exchange = cfg.eval.use_exchange;
  return o;
}

RunManifest cmd_gen_scenes(const RunConfig& cfg) {
  RunManifest m = start_manifest(cfg, "gen-scenes");
  const int counts[3] = {cfg.data.n_train, cfg.data.n_val, cfg.data.n_test};
  for (int s = 0; s < 3; ++s) {
    const fs::path dir = cfg.scene_dir() / kSplits[s];
    std::error_code ec;
    fs::remove_all(dir, ec);
    make_dirs(dir);
    std::vector<sim::Scene> scenes(static_cast<std::size_t>(counts[s]));
    perception::parallel_for(scenes.size(), [&](std::size_t i) {
      scenes[i] = sim::generate_scene(scene_seed(cfg.seed, s, static_cast<int>(i)), cfg.scene);
    });
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const fs::path p = dir / fmt::format("scene_{:04d}.json", i);
      sim::save_scene(p, scenes[i]);
      m.outputs.push_back(rel(cfg, p));
    }
  }
  return finish(cfg, std::move(m));
}

std::vector<sim::Scene> load_split(const RunConfig& cfg, const std::string& split) {
  const fs::path dir = cfg.scene_dir() / split;
  if (!fs::is_directory(dir)) throw IoError("missing scene directory " + dir.string() + " (run gen-scenes first)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<sim::Scene> scenes;
  for (const auto& f : files) scenes.push_back(sim::load_scene(f));
  return scenes;
}

RunManifest cmd_train(const RunConfig& cfg, const CommandOptions& opts) {
  RunManifest m = start_manifest(cfg, opts.baseline ? "train-baseline" : "train");
  const perception::Dataset data = load_dataset(cfg, "train");
  make_dirs(cfg.out_dir());
  nn::ParamStore params = perception::init_model(cfg.model, cfg.seed);
  const fs::path log_path = cfg.out_dir() / (prefix(opts.baseline) + "train_log.csv");
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  log << "step,loss,class_loss,reg_loss,sparsity,grad_norm\n";
  const auto rows = perception::train(params, cfg.model, cfg.train, data,
                                      opts.baseline ? GateMode::ForceOne : GateMode::Soft, cfg.seed);
  for (const auto& r : rows) {
    log << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.step, r.loss, r.class_loss, r.reg_loss,
                       r.sparsity, r.grad_norm);
  }
  if (!log) throw IoError("failed writing " + log_path.string());
  const fs::path ckpt = checkpoint_path(cfg, opts);
  if (ckpt.has_parent_path()) make_dirs(ckpt.parent_path());
  nn::save_checkpoint(ckpt, params,
                      {{"mode", opts.baseline ? "baseline" : "active"},
                       {"model", cfg.model.to_json()},
                       {"seed", cfg.seed},
                       {"steps", cfg.train.steps}});
  m.outputs.push_back(rel(cfg, log_path));
  m.outputs.push_back(rel(cfg, ckpt));
  return finish(cfg, std::move(m));
}

RunManifest cmd_eval(const RunConfig& cfg, const CommandOptions& opts) {
  RunManifest m = start_manifest(cfg, opts.baseline ? "eval-baseline" : "eval");
  const nn::ParamStore params = load_model(cfg, opts);
  const perception::Dataset data = load_dataset(cfg, "test");
  const auto options = eval_options(cfg, opts.baseline);
  const auto summary = collab::evaluate(params, cfg.model, data, options);
  make_dirs(cfg.out_dir());

  const std::string pre = prefix(opts.baseline);
  const fs::path metrics_path = cfg.out_dir() / (pre + "metrics.json");
  write_json(metrics_path, {{"mode", opts.baseline ? "baseline" : "active"},
                            {"n_car", summary.n_car},
                            {"epsilon", options.epsilon},
                            {"ap50", summary.iou.ap(0.5)},
                            {"ap70", summary.iou.ap(0.7)},
                            {"cd_map", summary.center.mean_ap()},
                            {"iou_ap", eval_json(summary.iou)},
                            {"center_distance_ap", eval_json(summary.center)},
                            {"comm", summary.comm.to_json()}});
  m.outputs.push_back(rel(cfg, metrics_path));
  const fs::path comm_path = cfg.out_dir() / (pre + "comm_report.json");
  write_json(comm_path, summary.comm.to_json());
  m.outputs.push_back(rel(cfg, comm_path));

  if (!opts.baseline) {
    const auto s = static_cast<std::size_t>(cfg.eval.map_scene);
    if (s >= data.size()) throw ConfigError("eval.map_scene is beyond the test split");
    const auto& scene = data.scenes[s];
    const int ego = std::min_element(scene.agents.begin(), scene.agents.end(), [](const auto& a, const auto& b) {
                      return a.id < b.id;
                    })->id;
    const auto frame = collab::run_frame(params, cfg.model, scene, data.raw[s], ego, options);
    const fs::path dir = cfg.out_dir() / "interest_maps";
    std::error_code ec;
    fs::remove_all(dir, ec);
    for (int l = 0; l < cfg.model.n_layers; ++l) {
      for (const auto& p : selection::export_interest_maps(collab::score_maps(frame.enc, l, cfg.model.grid), l, dir)) {
        m.outputs.push_back(rel(cfg, p));
      }
    }
    if (fs::exists(dir / "interest_manifest.json")) m.outputs.push_back(rel(cfg, dir / "interest_manifest.json"));
  }
  return finish(cfg, std::move(m));
}

RunManifest cmd_sweep(const RunConfig& cfg, const CommandOptions& opts) {
  RunManifest m = start_manifest(cfg, opts.baseline ? "sweep-baseline" : "sweep");
  const nn::ParamStore params = load_model(cfg, opts);
  const perception::Dataset data = load_dataset(cfg, "test");
  const auto result = collab::run_sweep(params, cfg.model, data, cfg.sweep.n_max, eval_options(cfg, opts.baseline));
  make_dirs(cfg.out_dir());
  const std::string pre = prefix(opts.baseline);
  const fs::path csv = cfg.out_dir() / (pre + "sweep.csv");
  const fs::path json = cfg.out_dir() / (pre + "sweep.json");
  const fs::path plot = cfg.out_dir() / (pre + "plot_data.csv");
  result.write_csv(csv);
  write_json(json, result.to_json());
  result.write_plot_data(plot);
  for (const auto& p : {csv, json, plot}) m.outputs.push_back(rel(cfg, p));
  return finish(cfg, std::move(m));
}

RunManifest cmd_report(const RunConfig& cfg) {
  RunManifest m = start_manifest(cfg, "report");
  const fs::path out = cfg.out_dir();
  nlohmann::json report = nlohmann::json::object();
  for (const char* name : {"metrics.json", "baseline_metrics.json", "sweep.json", "baseline_sweep.json"}) {
    if (fs::exists(out / name)) report[fs::path(name).stem().string()] = read_json(out / name);
  }
  if (report.empty()) throw IoError("no metric or sweep files in " + out.string() + " (run eval or sweep first)");

  std::string md = "# Results\n\n";
  for (const char* key : {"metrics", "baseline_metrics"}) {
    if (!report.contains(key)) continue;
    const auto& r = report[key];
    md += fmt::format("## {}\n\n", r.value("mode", std::string(key)));
    md += "| n_car | AP@0.5 | AP@0.7 | CD mAP | n_ori | n_act | p_ratio | bytes_up | bytes_down |\n";
    md += "|---|---|---|---|---|---|---|---|---|\n";
    const auto& c = r["comm"];
    md += fmt::format("| {} | {:.4f} | {:.4f} | {:.4f} | {} | {} | {:.4f} | {} | {} |\n\n", r["n_car"].get<int>(),
                      r["ap50"].get<double>(), r["ap70"].get<double>(), r["cd_map"].get<double>(),
                      c["n_ori"].get<std::uint64_t>(), c["n_act"].get<std::uint64_t>(), c["p_ratio"].get<double>(),
                      c["bytes_up"].get<std::uint64_t>(), c["bytes_down"].get<std::uint64_t>());
  }
  for (const char* key : {"sweep", "baseline_sweep"}) {
    if (!report.contains(key)) continue;
    md += fmt::format("## {}\n\n", key);
    md += "| n_car | AP@0.5 | AP@0.7 | CD mAP | queries used (%) | bytes_down |\n|---|---|---|---|---|---|\n";
    for (const auto& row : report[key]["rows"]) {
      md += fmt::format("| {} | {:.4f} | {:.4f} | {:.4f} | {:.2f} | {} |\n", row["n_car"].get<int>(),
                        row["ap50"].get<double>(), row["ap70"].get<double>(), row["cd_map"].get<double>(),
                        100.0 * row["comm"]["p_ratio"].get<double>(), row["comm"]["bytes_down"].get<std::uint64_t>());
    }
    md += "\n";
  }
  const fs::path json_path = out / "report.json";
  const fs::path md_path = out / "report.md";
  write_json(json_path, report);
  std::ofstream mdf(md_path, std::ios::trunc);
  if (!mdf) throw IoError("cannot write " + md_path.string());
  mdf << md;
  if (!mdf) throw IoError("failed writing " + md_path.string());
  m.outputs.push_back(rel(cfg, json_path));
  m.outputs.push_back(rel(cfg, md_path));
  return finish(cfg, std::move(m));
}

}  // namespace actbev::cli
