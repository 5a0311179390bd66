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
 * @file training.hpp
 * @brief Datasets of ray-cast scenes, Adam, the training loop and a small
 *        bounded thread pool helper.
 */

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "actbev/metrics.hpp"
#include "actbev/model.hpp"
#include "actbev/params.hpp"
#include "actbev/simworld.hpp"

namespace actbev::perception {

/// Worker count: ACTBEV_THREADS when set (>= 1), otherwise the hardware
/// concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. The first
/// exception thrown by any task is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Scenes with cached ray-cast channels for every camera.
struct Dataset {
  std::vector<sim::Scene> scenes;
  std::vector<attention::FeatureSet> raw;

  static Dataset build(std::vector<sim::Scene> scenes);
  std::size_t size() const { return scenes.size(); }
};

/// ego first, then the next agents in id order, wrapping around; n_car is
/// clipped to the number of agents.
std::vector<int> participants_for(const sim::Scene& scene, int ego_id, int n_car);

ModelInput make_input(const sim::Scene& scene, const attention::FeatureSet& raw, int ego_id,
                      const std::vector<int>& participants);

struct TrainConfig {
  int steps = 600;
  int batch = 1;
  double lr = 1e-3;
  /// Cosine decay from lr to lr * lr_final_ratio over the run; 1 keeps the
  /// rate constant.
  double lr_final_ratio = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;
  /// Weight of the mean interest score over hit pairs (soft mode only).
  double sparsity_weight = 0.0;
  int n_car_min = 1;
  int n_car_max = 5;
  int log_every = 10;
  LossConfig loss;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

class Adam {
 public:
  Adam(const nn::ParamStore& params, double lr, double beta1, double beta2, double eps);
  void step(nn::ParamStore& params, const std::vector<nn::Tensor>& grads);
  int steps_taken() const { return t_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

/// Rate used at step (1-based) under tcfg's schedule.
double learning_rate(const TrainConfig& tcfg, int step);

/// Global L2 norm of all gradients.
double global_norm(const std::vector<nn::Tensor>& grads);
/// Rescales so that the global norm is at most max_norm; returns the norm
/// before clipping.
double clip_global_norm(std::vector<nn::Tensor>& grads, double max_norm);

struct StepResult {
  double loss = 0.0;
  double class_loss = 0.0;
  double reg_loss = 0.0;
  double sparsity = 0.0;
  std::vector<nn::Tensor> grads;
};

/// Loss and gradients for one frame. Soft gating for the active model,
/// ForceOne for the dense baseline.
StepResult loss_and_grads(const nn::ParamStore& params, const ModelConfig& cfg, const TrainConfig& tcfg,
                          const ModelInput& input, const std::vector<DetectionBox>& gts, GateMode mode);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double class_loss = 0.0;
  double reg_loss = 0.0;
  double sparsity = 0.0;
  double grad_norm = 0.0;
};

/// Trains in place. Throws NumericalError on a non-finite loss.
std::vector<TrainLogRow> train(nn::ParamStore& params, const ModelConfig& cfg, const TrainConfig& tcfg,
                               const Dataset& data, GateMode mode, std::uint64_t seed,
                               const std::function<void(const TrainLogRow&)>& on_log = {});

}  // namespace actbev::perception
