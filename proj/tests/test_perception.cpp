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

#include <cmath>
#include <numbers>

#include "actbev/boxes.hpp"
#include "actbev/errors.hpp"
#include "actbev/hungarian.hpp"
#include "actbev/metrics.hpp"
#include "actbev/model.hpp"
#include "actbev/training.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace actbev;
using namespace actbev::perception;
using testutil::random_box;
using testutil::random_sets;

TEST_CASE("box validation") {
  DetectionBox b;
  CHECK_NOTHROW(b.validate());
  b.length = 0.0;
  CHECK_THROWS_AS(b.validate(), GeometryError);
  b = {};
  b.score = 1.5;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  b = {};
  b.cx = std::nan("");
  CHECK_THROWS_AS(b.validate(), GeometryError);
}

TEST_CASE("bev IoU equals the hull oracle") {
  Rng rng(41);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_box(rng, 2.5, false);
    const auto b = random_box(rng, 2.5, false);
    const double got = bev_iou(a, b);
    CHECK(got == doctest::Approx(oracle::iou(a, b)).epsilon(1e-9));
    CHECK(got == doctest::Approx(bev_iou(b, a)).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("bev IoU special cases") {
  DetectionBox a{0, 0, 4, 2, 0.3, 1};
  CHECK(bev_iou(a, a) == doctest::Approx(1.0));
  DetectionBox far = a;
  far.cx = 100;
  CHECK(bev_iou(a, far) == 0.0);
  DetectionBox half = a;
  half.yaw = 0.0;
  half.cx = 2.0;
  DetectionBox base{0, 0, 4, 2, 0.0, 1};
  CHECK(bev_iou(base, half) == doctest::Approx(4.0 / 12.0));
  DetectionBox turned = a;
  turned.yaw += std::numbers::pi;
  CHECK(bev_iou(a, turned) == doctest::Approx(1.0));
}

TEST_CASE("nms keeps the best box of each overlapping group") {
  std::vector<DetectionBox> boxes{
      {0, 0, 4, 2, 0, 0.9},
      {0.2, 0, 4, 2, 0, 0.8},
      {10, 0, 4, 2, 0, 0.7},
      {0, 0.1, 4, 2, 0, 0.95},
  };
  const auto kept = nms(boxes, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.95);
  CHECK(kept[1].cx == 10);
  CHECK(nms({}, 0.5).empty());
  CHECK(nms(boxes, 1.0).size() == 4);
}

TEST_CASE("assignment matches brute force") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng.below(5);
    const std::size_t c = r + rng.below(3);
    std::vector<std::vector<double>> cost(r, std::vector<double>(c));
    for (auto& row : cost) {
      for (auto& v : row) v = trial % 3 == 0 ? static_cast<double>(rng.below(4)) : rng.uniform(0, 10);
    }
    const auto a = solve_assignment(cost);
    CHECK(a.cost == doctest::Approx(oracle::brute_assignment(cost)).epsilon(1e-12));
    std::set<int> used;
    double sum = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      REQUIRE(a.row_to_col[i] >= 0);
      used.insert(a.row_to_col[i]);
      sum += cost[i][static_cast<std::size_t>(a.row_to_col[i])];
    }
    CHECK(used.size() == r);
    CHECK(sum == doctest::Approx(a.cost));
  }
}

TEST_CASE("assignment input errors") {
  CHECK_THROWS_AS(solve_assignment(std::vector<std::vector<double>>{{1, 2}, {3}}), std::invalid_argument);
  CHECK_THROWS_AS(solve_assignment(std::vector<std::vector<double>>{{1, INFINITY}}), std::invalid_argument);
  CHECK(solve_assignment(std::vector<std::vector<double>>{}).row_to_col.empty());
}

TEST_CASE("AP equals the brute-force evaluator exactly") {
  Rng rng(43);
  int nontrivial = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const auto [preds, gts] = random_sets(rng);
    const auto iou = eval_ap(preds, gts);
    const auto want_iou = oracle::ap(preds, gts, kIouThresholds, false);
    for (std::size_t i = 0; i < kIouThresholds.size(); ++i) CHECK(iou.per_threshold[i].ap == want_iou[i]);
    CHECK(iou.ap(0.7) <= iou.ap(0.5));
    const auto cd = eval_center_distance_ap(preds, gts);
    const auto want_cd = oracle::ap(preds, gts, kCenterDistanceThresholds, true);
    for (std::size_t i = 0; i < kCenterDistanceThresholds.size(); ++i) CHECK(cd.per_threshold[i].ap == want_cd[i]);
    for (std::size_t i = 1; i < kCenterDistanceThresholds.size(); ++i) {
      CHECK(cd.per_threshold[i - 1].ap <= cd.per_threshold[i].ap);
    }
    for (const auto& t : iou.per_threshold) {
      CHECK(t.tp + t.fp == static_cast<int>(preds.size()));
      CHECK(t.tp + t.fn == static_cast<int>(gts.size()));
    }
    if (iou.ap(0.5) > 0.0 && iou.ap(0.5) < 1.0) ++nontrivial;
  }
  CHECK(nontrivial > 30);
}

TEST_CASE("AP edge cases") {
  const BoxRecord g{0, 0, {0, 0, 4, 2, 0, 1}};
  CHECK(eval_ap({}, {}).ap(0.5) == 0.0);
  CHECK(eval_ap({}, {g}).ap(0.5) == 0.0);
  CHECK(eval_ap({g}, {g}).ap(0.5) == 1.0);
  CHECK(eval_ap({g}, {}).ap(0.5) == 0.0);
  BoxRecord other_frame = g;
  other_frame.agent_id = 1;
  CHECK(eval_ap({other_frame}, {g}).ap(0.5) == 0.0);
  CHECK_THROWS_AS(eval_ap({g}, {g}).at(0.6), std::out_of_range);
  CHECK(average_precision({1, 0, 1}, 2) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  CHECK(average_precision({0, 1}, 4) == doctest::Approx(0.5 / 4.0));
  BoxRecord bad = g;
  bad.box.width = -1;
  CHECK_THROWS_AS(eval_ap({bad}, {g}), GeometryError);
}

TEST_CASE("decoded centres stay inside their cell") {
  geometry::BevGrid grid;
  grid.h_cells = 4;
  grid.w_cells = 5;
  Rng rng(44);
  for (int i = 0; i < 200; ++i) {
    const int cell = static_cast<int>(rng.below(20));
    const std::vector<double> reg{rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-1, 2), rng.uniform(-1, 1),
                                  rng.uniform(-3, 3)};
    const auto b = decode_cell(grid, cell, rng.uniform(-5, 5), reg);
    const auto c = grid.cell_center(grid.cell(cell));
    CHECK(std::abs(b.cx - c.x()) <= 0.5 * grid.cell_size_x() + 1e-9);
    CHECK(std::abs(b.cy - c.y()) <= 0.5 * grid.cell_size_y() + 1e-9);
    CHECK(b.length == doctest::Approx(std::exp(reg[2])));
    CHECK(b.score > 0.0);
    CHECK(b.score < 1.0);
  }
}

TEST_CASE("yaw folding into a half turn") {
  const double pi = std::numbers::pi;
  CHECK(wrap_half_turn(0.0) == 0.0);
  CHECK(wrap_half_turn(pi) == doctest::Approx(0.0));
  CHECK(wrap_half_turn(0.5 * pi) == doctest::Approx(-0.5 * pi));
  Rng rng(45);
  for (int i = 0; i < 500; ++i) {
    const double d = rng.uniform(-20, 20);
    const double w = wrap_half_turn(d);
    CHECK(w >= -0.5 * pi);
    CHECK(w < 0.5 * pi);
    const double k = (d - w) / pi;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
  }
}

TEST_CASE("model configuration and parameter compatibility") {
  const auto s = testutil::tiny_setup(1);
  CHECK_NOTHROW(s.cfg.validate());
  auto bad = s.cfg;
  bad.channels = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const auto round = ModelConfig::from_json(s.cfg.to_json());
  CHECK(round.to_json() == s.cfg.to_json());
  CHECK_THROWS_AS(ModelConfig::from_json(nlohmann::json{{"no_such_key", 1}}), ConfigError);
  const auto params = init_model(s.cfg, 3);
  CHECK_NOTHROW(check_compatible(params, s.cfg));
  auto wider = s.cfg;
  wider.ffn_hidden = 16;
  CHECK_THROWS_AS(check_compatible(params, wider), ConfigError);
  CHECK(init_model(s.cfg, 3) == params);
  CHECK_FALSE(init_model(s.cfg, 4) == params);
}

TEST_CASE("loss matching sends each ground truth box to a distinct cell") {
  const auto s = testutil::tiny_setup(2);
  const auto params = init_model(s.cfg, 5);
  const int ego = s.scene.agents[0].id;
  const auto input = make_input(s.scene, s.data.raw[0], ego, participants_for(s.scene, ego, 2));
  const auto gts = sim::ground_truth(s.scene, ego, s.cfg.grid);
  nn::Tape tape;
  const nn::BoundParams bound(tape, params);
  const auto vars = ModelVars::bind(bound, s.cfg);
  const auto enc = encode_bev(tape, vars, s.cfg, input, {});
  const auto out = head(enc.bev, vars);
  const auto lr = match_and_loss(out, gts, s.cfg.grid, {});
  REQUIRE(lr.gt_to_cell.size() == gts.size());
  std::set<int> cells(lr.gt_to_cell.begin(), lr.gt_to_cell.end());
  CHECK(cells.size() == gts.size());
  CHECK(std::isfinite(lr.loss.value()[0]));
  CHECK(lr.class_loss > 0.0);
  // No ground truth: only the background term remains.
  const auto empty = match_and_loss(out, {}, s.cfg.grid, {});
  CHECK(empty.reg_loss == 0.0);
  CHECK(empty.loss.value()[0] == doctest::Approx(empty.class_loss));
}

TEST_CASE("full training loss passes a gradient check") {
  for (auto mode : {GateMode::Soft, GateMode::ForceOne}) {
    const auto r = testutil::full_loss_grad_check(7, mode, 3);
    CHECK(r.probes > 100);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("participants rotate from the ego") {
  const auto s = testutil::tiny_setup(3);
  std::vector<int> ids;
  for (const auto& a : s.scene.agents) ids.push_back(a.id);
  CHECK(participants_for(s.scene, ids[1], 2) == std::vector<int>{ids[1], ids[2]});
  CHECK(participants_for(s.scene, ids[2], 2) == std::vector<int>{ids[2], ids[0]});
  CHECK(participants_for(s.scene, ids[0], 10).size() == ids.size());
}

TEST_CASE("adam, clipping and the learning-rate schedule") {
  nn::ParamStore store;
  store.add("w", Tensor({2}, std::vector<double>{1.0, -2.0}));
  Adam adam(store, 0.1, 0.9, 0.999, 1e-8);
  const std::vector<Tensor> g{Tensor({2}, std::vector<double>{0.5, -4.0})};
  adam.step(store, g);
  // First step: m/c1 = g and v/c2 = g^2, so each entry moves by lr * sign(g)
  // (up to adam_eps).
  CHECK(store.tensor(0)[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(store.tensor(0)[1] == doctest::Approx(-1.9).epsilon(1e-7));
  CHECK(adam.steps_taken() == 1);

  std::vector<Tensor> grads{Tensor({2}, std::vector<double>{3.0, 4.0})};
  CHECK(clip_global_norm(grads, 1.0) == doctest::Approx(5.0));
  CHECK(global_norm(grads) == doctest::Approx(1.0));
  CHECK(clip_global_norm(grads, 10.0) == doctest::Approx(1.0));
  CHECK(grads[0][1] == doctest::Approx(0.8));

  TrainConfig tc;
  tc.steps = 101;
  CHECK(learning_rate(tc, 1) == tc.lr);
  CHECK(learning_rate(tc, 101) == tc.lr);
  tc.lr_final_ratio = 0.1;
  CHECK(learning_rate(tc, 1) == doctest::Approx(tc.lr));
  CHECK(learning_rate(tc, 51) == doctest::Approx(0.55 * tc.lr));
  CHECK(learning_rate(tc, 101) == doctest::Approx(0.1 * tc.lr));
  for (int s = 2; s <= 101; ++s) CHECK(learning_rate(tc, s) <= learning_rate(tc, s - 1));
  tc.lr_final_ratio = 0.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}
