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

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "actbev/commands.hpp"
#include "actbev/config.hpp"
#include "actbev/errors.hpp"

using namespace actbev;
using namespace actbev::cli;
namespace fs = std::filesystem;

namespace {

/// Overrides for a run small enough to train and evaluate in seconds.
std::vector<std::string> tiny_overrides(const fs::path& out) {
  return {"scene.n_agents=3",       "scene.n_objects=8",      "scene.image_width=8",    "scene.image_height=6",
          "data.n_train=2",         "data.n_val=1",           "data.n_test=2",          "model.grid.h_cells=6",
          "model.grid.w_cells=6",   "model.channels=8",       "model.feature_h=6",      "model.feature_w=8",
          "model.n_layers=1",       "model.pose_dim=8",       "model.selection_hidden=8", "model.ffn_hidden=8",
          "train.steps=3",          "train.n_car_max=3",      "eval.n_car=3",           "sweep.n_max=2",
          "paths.out=" + nlohmann::json(out.string()).dump()};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = fmt::format("\"{}\" {} > /dev/null 2>&1", ACTBEV_CLI_PATH, args);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults validate and round-trip") {
  const RunConfig def;
  CHECK_NOTHROW(def.validate());
  const auto back = RunConfig::from_json(def.to_json());
  CHECK(back.to_json() == def.to_json());
  CHECK(config_hash(back) == config_hash(def));
  CHECK(config_hash(def).size() == 16);
  CHECK(def.scene_dir() == fs::path("out") / "scenes");
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(RunConfig::from_json({{"nonsense", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"train", {{"steps", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(load_config("", {"train.unknown_key=3"}), ConfigError);
  CHECK_THROWS_AS(load_config("", {"no-equals-sign"}), ConfigError);
  CHECK_THROWS_AS(load_config("", {"model.feature_h=7"}), ConfigError);
  CHECK_THROWS_AS(load_config("", {"eval.epsilon=1.0"}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json", {}), ConfigError);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  nlohmann::json j = RunConfig().to_json();
  apply_override(j, "train.lr=0.005");
  apply_override(j, "eval.use_exchange=false");
  apply_override(j, "paths.out=somewhere/else");
  CHECK(j["train"]["lr"] == 0.005);
  CHECK(j["eval"]["use_exchange"] == false);
  CHECK(j["paths"]["out"] == "somewhere/else");
  const auto cfg = load_config("", {"seed=12", "scene.layout=\"grid\""});
  CHECK(cfg.seed == 12);
  CHECK(cfg.scene.layout == sim::Layout::Grid);
}

TEST_CASE("config file merge and key-order independent hash") {
  const auto dir = fresh_dir("actbev_test_cfg");
  {
    std::ofstream a(dir / "a.json");
    a << R"({"seed": 5, "train": {"steps": 7, "lr": 0.002}})";
    std::ofstream b(dir / "b.json");
    b << R"({"train": {"lr": 0.002, "steps": 7}, "seed": 5})";
    std::ofstream c(dir / "c.json");
    c << R"([1, 2])";
  }
  const auto ca = load_config(dir / "a.json", {});
  const auto cb = load_config(dir / "b.json", {});
  CHECK(ca.train.steps == 7);
  CHECK(ca.train.batch == RunConfig().train.batch);
  CHECK(config_hash(ca) == config_hash(cb));
  CHECK(config_hash(ca) != config_hash(load_config(dir / "a.json", {"seed=6"})));
  CHECK(load_config(dir / "a.json", {"train.steps=9"}).train.steps == 9);
  CHECK_THROWS_AS(load_config(dir / "c.json", {}), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip and json helpers") {
  RunManifest m{"eval", "abc", code_version(), 3, utc_timestamp(), utc_timestamp(), {"x.json"}, {{"k", 1}}};
  const auto back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(m.started.size() == 20);
  CHECK(m.started.back() == 'Z');
  CHECK_THROWS_AS(read_json("/nonexistent/file.json"), IoError);
}

TEST_CASE("scene seeds do not collide across splits") {
  std::set<std::uint64_t> seeds;
  for (int split = 0; split < 3; ++split) {
    for (int i = 0; i < 1000; ++i) seeds.insert(scene_seed(42, split, i));
  }
  CHECK(seeds.size() == 3000);
}

TEST_CASE("end-to-end commands") {
  const auto out = fresh_dir("actbev_test_run");
  const auto cfg = load_config("", tiny_overrides(out));

  CHECK_THROWS_AS(load_split(cfg, "test"), IoError);
  const auto gen = cmd_gen_scenes(cfg);
  CHECK(gen.outputs.size() == 5);
  CHECK(fs::exists(out / "manifest_gen-scenes.json"));
  CHECK(load_split(cfg, "train").size() == 2);
  CHECK(load_split(cfg, "test").size() == 2);

  SUBCASE("scene generation is reproducible") {
    const auto out2 = fresh_dir("actbev_test_run2");
    auto ov = tiny_overrides(out2);
    cmd_gen_scenes(load_config("", ov));
    for (const auto& rel : gen.outputs) CHECK(slurp(out / rel) == slurp(out2 / rel));
    fs::remove_all(out2);
  }

  SUBCASE("training, evaluation, sweep and report") {
    CHECK_THROWS_AS(cmd_eval(cfg, {}), IoError);
    const auto tr = cmd_train(cfg, {});
    CHECK(fs::exists(out / "checkpoint.bin"));
    CHECK(fs::exists(out / "train_log.csv"));
    CHECK(tr.config_hash == config_hash(cfg));
    CommandOptions base;
    base.baseline = true;
    cmd_train(cfg, base);
    CHECK(fs::exists(out / "baseline.bin"));
    // A checkpoint of one family cannot be evaluated as the other.
    CommandOptions mixed;
    mixed.checkpoint = out / "baseline.bin";
    CHECK_THROWS_AS(cmd_eval(cfg, mixed), ConfigError);

    cmd_eval(cfg, {});
    const auto metrics = read_json(out / "metrics.json");
    CHECK(metrics["ap70"].get<double>() <= metrics["ap50"].get<double>());
    const auto comm = metrics["comm"];
    CHECK(comm["n_act"].get<std::uint64_t>() + comm["pruned"].get<std::uint64_t>() == comm["n_ori"].get<std::uint64_t>());
    CHECK(fs::exists(out / "interest_maps" / "layer0_car0.csv"));
    const std::string first = slurp(out / "metrics.json");
    cmd_eval(cfg, {});
    CHECK(slurp(out / "metrics.json") == first);

    cmd_eval(cfg, base);
    CHECK(read_json(out / "baseline_metrics.json")["comm"]["p_ratio"] == 1.0);

    auto one = load_config("", [&] {
      auto ov = tiny_overrides(out);
      ov.push_back("sweep.n_max=1");
      ov.push_back("eval.n_car=1");
      return ov;
    }());
    cmd_sweep(one, {});
    std::ifstream csv(out / "sweep.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    cmd_eval(one, {});
    const auto m1 = read_json(out / "metrics.json");
    CHECK(row.rfind(fmt::format("1,{:.17g},", m1["ap50"].get<double>()), 0) == 0);

    const auto rep = cmd_report(cfg);
    CHECK(fs::exists(out / "report.md"));
    CHECK(read_json(out / "report.json").contains("metrics"));
    CHECK(fs::exists(out / "manifest_report.json"));
    CHECK(rep.outputs.size() == 2);
  }

  SUBCASE("zero training steps leave the initial parameters") {
    auto ov = tiny_overrides(out);
    ov.push_back("train.steps=0");
    const auto c0 = load_config("", ov);
    cmd_train(c0, {});
    nlohmann::json meta;
    const auto p = nn::load_checkpoint(out / "checkpoint.bin", &meta);
    CHECK(p == perception::init_model(c0.model, c0.seed));
    CHECK(meta["mode"] == "active");
  }

  SUBCASE("an empty test split cannot be evaluated") {
    auto ov = tiny_overrides(out);
    ov.push_back("data.n_test=0");
    ov.push_back("train.steps=0");
    const auto c0 = load_config("", ov);
    const auto out_e = fresh_dir("actbev_test_empty");
    auto ov2 = ov;
    ov2.push_back("paths.out=" + nlohmann::json(out_e.string()).dump());
    const auto ce = load_config("", ov2);
    cmd_gen_scenes(ce);
    cmd_train(ce, {});
    CHECK_THROWS_AS(cmd_eval(ce, {}), IoError);
    fs::remove_all(out_e);
  }
  fs::remove_all(out);
}

TEST_CASE("executable exit codes") {
  const auto out = fresh_dir("actbev_test_exe");
  std::string common;
  for (const auto& o : tiny_overrides(out)) common += " --set '" + o + "'";
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("gen-scenes --set train.nope=1") == 2);
  CHECK(run_cli("gen-scenes --config /nonexistent.json") == 2);
  CHECK(run_cli("eval" + common) == 3);
  CHECK(run_cli("gen-scenes" + common) == 0);
  CHECK(run_cli("train" + common) == 0);
  CHECK(run_cli("eval --epsilon 0.2" + common) == 0);
  CHECK(run_cli("eval --epsilon 2" + common) == 2);
  CHECK(run_cli("sweep --n-max 2" + common) == 0);
  CHECK(run_cli("report" + common) == 0);
  CHECK(fs::exists(out / "manifest_sweep.json"));
  fs::remove_all(out);
}
