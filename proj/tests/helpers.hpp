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
// Random small configurations shared by the unit and acceptance tests.

#include <vector>

#include "actbev/attention.hpp"
#include "actbev/boxes.hpp"
#include "actbev/metrics.hpp"
#include "actbev/geometry.hpp"
#include "actbev/grad_check.hpp"
#include "actbev/model.hpp"
#include "actbev/rng.hpp"
#include "actbev/simworld.hpp"
#include "actbev/training.hpp"

namespace testutil {

using actbev::Rng;
using actbev::nn::Tensor;

inline Tensor random_tensor(actbev::nn::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

/// Attention block with non-trivial offsets and weights.
inline actbev::attention::DfmAttnParams random_attn(int c, int n_head, int n_key, Rng& rng) {
  auto p = actbev::attention::DfmAttnParams::init(c, n_head, n_key, rng);
  p.offset_w = random_tensor(p.offset_w.shape(), rng, -0.4, 0.4);
  p.offset_b = random_tensor(p.offset_b.shape(), rng, -1.5, 1.5);
  p.weight_w = random_tensor(p.weight_w.shape(), rng, -0.8, 0.8);
  p.weight_b = random_tensor(p.weight_b.shape(), rng, -0.5, 0.5);
  return p;
}

struct SmallWorld {
  actbev::geometry::BevGrid grid;
  std::vector<actbev::geometry::CameraRig> rigs;
  actbev::geometry::AgentPoses poses;  // ego_from_car, ego id 0
  actbev::attention::FeatureSet features;
  int n_cars = 1;
  int feat_h = 6;
  int feat_w = 8;
};

/// Grid up to 8x8 over +-12 m, up to 3 cars with 2 cameras each, cars placed
/// inside the grid so that most cells are seen by someone.
inline SmallWorld random_world(Rng& rng, int channels, int max_cars = 3, int max_cams = 2) {
  SmallWorld w;
  w.grid.h_cells = 2 + static_cast<int>(rng.below(7));
  w.grid.w_cells = 2 + static_cast<int>(rng.below(7));
  w.grid.x_min = -12.0;
  w.grid.x_max = 12.0;
  w.grid.y_min = -12.0;
  w.grid.y_max = 12.0;
  w.n_cars = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_cars)));
  const int cams = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_cams)));
  w.feat_h = 4 + static_cast<int>(rng.below(5));
  w.feat_w = 4 + static_cast<int>(rng.below(5));
  const auto k = actbev::geometry::CameraIntrinsics::from_fov(w.feat_w, w.feat_h, rng.uniform(1.2, 2.0));
  for (int car = 0; car < w.n_cars; ++car) {
    const actbev::geometry::Vec3 t = car == 0 ? actbev::geometry::Vec3(0, 0, 0)
                                              : actbev::geometry::Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), 0);
    w.poses[car] = actbev::geometry::HomTransform::from_yaw(car == 0 ? 0.0 : rng.uniform(-3.1, 3.1), t);
    for (int c = 0; c < cams; ++c) {
      auto rig = actbev::sim::make_rig(car, c, cams, 1.5, k);
      w.rigs.push_back(rig);
      w.features[rig.key()] = random_tensor({static_cast<std::size_t>(w.feat_h), static_cast<std::size_t>(w.feat_w),
                                             static_cast<std::size_t>(channels)},
                                            rng);
    }
  }
  return w;
}

/// One small ray-cast scene with a matching tiny model configuration
/// (6x6 grid, C = 8, two layers, three agents with two 8x6 cameras each).
struct TinySetup {
  actbev::perception::ModelConfig cfg;
  actbev::sim::Scene scene;
  actbev::perception::Dataset data;
};

inline TinySetup tiny_setup(std::uint64_t seed) {
  TinySetup s;
  actbev::sim::SceneConfig sc;
  sc.n_objects = 8;
  sc.n_agents = 3;
  sc.image_width = 8;
  sc.image_height = 6;
  s.scene = actbev::sim::generate_scene(seed, sc);
  s.data = actbev::perception::Dataset::build({s.scene});
  s.cfg.grid.h_cells = 6;
  s.cfg.grid.w_cells = 6;
  s.cfg.channels = 8;
  s.cfg.feature_h = 6;
  s.cfg.feature_w = 8;
  s.cfg.n_layers = 2;
  s.cfg.pose_dim = 8;
  s.cfg.selection_hidden = 8;
  s.cfg.ffn_hidden = 8;
  return s;
}

/// Gradient check of the complete training loss (encoder, head, matching,
/// sparsity term) of the tiny model. Parameters are jittered away from the
/// initial values so that sampling offsets are non-zero; up to `probes`
/// entries of every tensor are checked.
inline actbev::nn::GradCheckResult full_loss_grad_check(std::uint64_t seed, actbev::attention::GateMode mode,
                                                        std::size_t probes) {
  using namespace actbev;
  const auto s = tiny_setup(seed);
  auto store = perception::init_model(s.cfg, seed);
  Rng rng(seed + 17);
  for (auto& t : store.tensors()) {
    for (auto& v : t.vec()) v += rng.uniform(-0.05, 0.05);
  }
  const int ego = s.scene.agents[0].id;
  const auto input = perception::make_input(s.scene, s.data.raw[0], ego,
                                            perception::participants_for(s.scene, ego, 3));
  const auto gts = sim::ground_truth(s.scene, ego, s.cfg.grid);
  perception::TrainConfig tcfg;
  tcfg.sparsity_weight = 0.5;
  const nn::LossFn fn = [&](const std::vector<Tensor>& p, std::vector<Tensor>* g) {
    auto local = store;
    for (std::size_t i = 0; i < p.size(); ++i) local.tensor(i) = p[i];
    auto r = perception::loss_and_grads(local, s.cfg, tcfg, input, gts, mode);
    if (g) *g = std::move(r.grads);
    return r.loss;
  };
  return nn::grad_check(fn, store.tensors(), 1e-5, probes, seed);
}

inline actbev::perception::DetectionBox random_box(Rng& rng, double spread, bool coarse_score) {
  actbev::perception::DetectionBox b;
  b.cx = rng.uniform(-spread, spread);
  b.cy = rng.uniform(-spread, spread);
  b.length = rng.uniform(3.5, 5.0);
  b.width = rng.uniform(1.6, 2.2);
  b.yaw = rng.uniform(-3.2, 3.2);
  b.score = coarse_score ? 0.1 * static_cast<double>(1 + rng.below(9)) : rng.uniform(0.0, 1.0);
  return b;
}

/// Predictions are jittered copies of ground truth plus clutter, spread over a
/// few frames, with coarse scores so that ties occur.
inline std::pair<std::vector<actbev::perception::BoxRecord>, std::vector<actbev::perception::BoxRecord>> random_sets(Rng& rng) {
  std::vector<actbev::perception::BoxRecord> preds, gts;
  const int frames = 1 + static_cast<int>(rng.below(3));
  for (int f = 0; f < frames; ++f) {
    const int scene = static_cast<int>(rng.below(2)), agent = f;
    const int n_gt = static_cast<int>(rng.below(6));
    for (int i = 0; i < n_gt; ++i) {
      const auto g = random_box(rng, 8.0, false);
      gts.push_back({scene, agent, g});
      const int copies = static_cast<int>(rng.below(3));
      for (int c = 0; c < copies; ++c) {
        auto p = g;
        p.cx += rng.uniform(-1.2, 1.2);
        p.cy += rng.uniform(-1.2, 1.2);
        p.yaw += rng.uniform(-0.4, 0.4);
        p.length *= rng.uniform(0.8, 1.2);
        p.score = 0.1 * static_cast<double>(1 + rng.below(9));
        preds.push_back({scene, agent, p});
      }
    }
    const int clutter = static_cast<int>(rng.below(4));
    for (int i = 0; i < clutter; ++i) preds.push_back({scene, agent, random_box(rng, 8.0, true)});
  }
  return {preds, gts};
}

}  // namespace testutil
