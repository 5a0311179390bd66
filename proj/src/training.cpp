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

#include "actbev/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>

#include "actbev/errors.hpp"
#include "actbev/ops.hpp"
#include "actbev/rng.hpp"

namespace actbev::perception {

int thread_count() {
  if (const char* env = std::getenv("ACTBEV_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("ACTBEV_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {
// Nested calls run serially on the calling worker.
thread_local bool in_worker = false;
}  // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1 || in_worker) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      in_worker = true;
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Dataset Dataset::build(std::vector<sim::Scene> scenes) {
  Dataset d;
  d.scenes = std::move(scenes);
  d.raw.resize(d.scenes.size());
  parallel_for(d.scenes.size(), [&](std::size_t i) {
    for (const auto& rig : d.scenes[i].all_rigs()) d.raw[i][rig.key()] = sim::raycast_channels(d.scenes[i], rig).data;
  });
  return d;
}

std::vector<int> participants_for(const sim::Scene& scene, int ego_id, int n_car) {
  std::vector<int> ids;
  for (const auto& a : scene.agents) ids.push_back(a.id);
  std::sort(ids.begin(), ids.end());
  const auto it = std::find(ids.begin(), ids.end(), ego_id);
  if (it == ids.end()) throw std::out_of_range("ego is not in the scene");
  if (n_car < 1) throw std::invalid_argument("n_car must be >= 1");
  const std::size_t start = static_cast<std::size_t>(it - ids.begin());
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(n_car), ids.size());
  std::vector<int> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(ids[(start + k) % ids.size()]);
  return out;
}

ModelInput make_input(const sim::Scene& scene, const attention::FeatureSet& raw, int ego_id,
                      const std::vector<int>& participants) {
  ModelInput in;
  in.ego_id = ego_id;
  const auto all_poses = scene.poses_in_frame_of(ego_id);
  for (int id : participants) {
    const auto& agent = scene.agent(id);
    in.poses[id] = all_poses.at(id);
    for (const auto& rig : agent.rigs) {
      in.rigs.push_back(rig);
      const auto it = raw.find(rig.key());
      if (it == raw.end()) throw std::invalid_argument("raw channels missing for a participating camera");
      in.raw[rig.key()] = it->second;
    }
  }
  return in;
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(lr_final_ratio > 0.0 && lr_final_ratio <= 1.0)) throw ConfigError("train.lr_final_ratio must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (sparsity_weight < 0.0) throw ConfigError("train.sparsity_weight must be >= 0");
  if (n_car_min < 1 || n_car_max < n_car_min) throw ConfigError("train.n_car_min/n_car_max are inconsistent");
  if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},           {"batch", batch},
          {"lr", lr},                 {"lr_final_ratio", lr_final_ratio},
          {"beta1", beta1},
          {"beta2", beta2},           {"adam_eps", adam_eps},
          {"grad_clip", grad_clip},   {"sparsity_weight", sparsity_weight},
          {"n_car_min", n_car_min},   {"n_car_max", n_car_max},
          {"log_every", log_every},   {"loss", loss.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") c.steps = value.get<int>();
    else if (key == "batch") c.batch = value.get<int>();
    else if (key == "lr") c.lr = value.get<double>();
    else if (key == "lr_final_ratio") c.lr_final_ratio = value.get<double>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "adam_eps") c.adam_eps = value.get<double>();
    else if (key == "grad_clip") c.grad_clip = value.get<double>();
    else if (key == "sparsity_weight") c.sparsity_weight = value.get<double>();
    else if (key == "n_car_min") c.n_car_min = value.get<int>();
    else if (key == "n_car_max") c.n_car_max = value.get<int>();
    else if (key == "log_every") c.log_every = value.get<int>();
    else if (key == "loss") c.loss = LossConfig::from_json(value, c.loss);
    else throw ConfigError("unknown train key '" + key + "'");
  }
  return c;
}

Adam::Adam(const nn::ParamStore& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& t : params.tensors()) {
    m_.emplace_back(t.shape(), 0.0);
    v_.emplace_back(t.shape(), 0.0);
  }
}

void Adam::step(nn::ParamStore& params, const std::vector<nn::Tensor>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("Adam: gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Tensor& p = params.tensor(i);
    const nn::Tensor& g = grads[i];
    if (g.numel() != p.numel()) throw std::invalid_argument("Adam: gradient shape mismatch for " + params.name(i));
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
      p[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

double learning_rate(const TrainConfig& tcfg, int step) {
  if (tcfg.steps <= 1 || tcfg.lr_final_ratio == 1.0) return tcfg.lr;
  const double t = static_cast<double>(std::clamp(step, 1, tcfg.steps) - 1) / (tcfg.steps - 1);
  const double r = tcfg.lr_final_ratio + (1.0 - tcfg.lr_final_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return tcfg.lr * r;
}

double global_norm(const std::vector<nn::Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double v : g.span()) s += v * v;
  }
  return std::sqrt(s);
}

double clip_global_norm(std::vector<nn::Tensor>& grads, double max_norm) {
  const double n = global_norm(grads);
  if (n > max_norm) {
    const double f = max_norm / n;
    for (auto& g : grads) {
      for (double& v : g.span()) v *= f;
    }
  }
  return n;
}

StepResult loss_and_grads(const nn::ParamStore& params, const ModelConfig& cfg, const TrainConfig& tcfg,
                          const ModelInput& input, const std::vector<DetectionBox>& gts, GateMode mode) {
  nn::Tape tape;
  const nn::BoundParams bound(tape, params, true);
  const ModelVars vars = ModelVars::bind(bound, cfg);
  EncodeOptions opts;
  opts.mode = mode;
  const Encoded enc = encode_bev(tape, vars, cfg, input, opts);
  const HeadOutput out = head(enc.bev, vars);
  const LossResult lr = match_and_loss(out, gts, cfg.grid, tcfg.loss);
  Var total = lr.loss;
  StepResult res;
  if (mode == GateMode::Soft && tcfg.sparsity_weight > 0.0) {
    double pairs = 0.0;
    for (const auto& l : enc.layers) {
      for (double v : l.hit_mask.span()) pairs += v;
    }
    if (pairs > 0.0) {
      for (const auto& l : enc.layers) {
        if (!l.scores.valid()) continue;
        nn::Tensor w = l.hit_mask;
        for (double& v : w.span()) v *= tcfg.sparsity_weight / pairs;
        const Var s = nn::weighted_sum(l.scores, w);
        res.sparsity += s.value()[0];
        total = nn::add(total, s);
      }
    }
  }
  res.loss = total.value()[0];
  res.class_loss = lr.class_loss;
  res.reg_loss = lr.reg_loss;
  if (!std::isfinite(res.loss)) throw NumericalError("non-finite training loss");
  tape.backward(total);
  res.grads = bound.grads(tape);
  return res;
}

std::vector<TrainLogRow> train(nn::ParamStore& params, const ModelConfig& cfg, const TrainConfig& tcfg,
                               const Dataset& data, GateMode mode, std::uint64_t seed,
                               const std::function<void(const TrainLogRow&)>& on_log) {
  cfg.validate();
  tcfg.validate();
  if (tcfg.steps > 0 && data.size() == 0) throw ConfigError("training needs at least one scene");
  Adam adam(params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
  Rng rng(seed);
  std::vector<TrainLogRow> log;
  struct Pick {
    std::size_t scene;
    int ego;
    int n_car;
  };
  for (int step = 1; step <= tcfg.steps; ++step) {
    std::vector<Pick> picks;
    for (int b = 0; b < tcfg.batch; ++b) {
      const std::size_t s = static_cast<std::size_t>(rng.below(data.size()));
      const auto& agents = data.scenes[s].agents;
      const int ego = agents[static_cast<std::size_t>(rng.below(agents.size()))].id;
      const int n_car =
          tcfg.n_car_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(tcfg.n_car_max - tcfg.n_car_min + 1)));
      picks.push_back({s, ego, n_car});
    }
    std::vector<StepResult> results(picks.size());
    parallel_for(picks.size(), [&](std::size_t b) {
      const auto& sc = data.scenes[picks[b].scene];
      const auto input = make_input(sc, data.raw[picks[b].scene], picks[b].ego,
                                    participants_for(sc, picks[b].ego, picks[b].n_car));
      results[b] = loss_and_grads(params, cfg, tcfg, input, sim::ground_truth(sc, picks[b].ego, cfg.grid), mode);
    });
    std::vector<nn::Tensor> grads = std::move(results[0].grads);
    TrainLogRow row;
    row.step = step;
    for (std::size_t b = 0; b < results.size(); ++b) {
      if (b > 0) {
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += results[b].grads[i];
      }
      row.loss += results[b].loss;
      row.class_loss += results[b].class_loss;
      row.reg_loss += results[b].reg_loss;
      row.sparsity += results[b].sparsity;
    }
    const double inv = 1.0 / static_cast<double>(results.size());
    for (auto& g : grads) {
      for (double& v : g.span()) v *= inv;
    }
    row.loss *= inv;
    row.class_loss *= inv;
    row.reg_loss *= inv;
    row.sparsity *= inv;
    row.grad_norm = clip_global_norm(grads, tcfg.grad_clip);
    if (!std::isfinite(row.grad_norm)) throw NumericalError("non-finite gradient at step " + std::to_string(step));
    adam.set_lr(learning_rate(tcfg, step));
    adam.step(params, grads);
    if (step % tcfg.log_every == 0 || step == tcfg.steps) {
      log.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return log;
}

}  // namespace actbev::perception
