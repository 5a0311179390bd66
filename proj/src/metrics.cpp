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

#include "actbev/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace actbev::perception {

const ThresholdResult& EvalResult::at(double threshold) const {
  for (const auto& r : per_threshold) {
    if (r.threshold == threshold) return r;
  }
  throw std::out_of_range("threshold was not evaluated");
}

double EvalResult::mean_ap() const {
  if (per_threshold.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : per_threshold) s += r.ap;
  return s / static_cast<double>(per_threshold.size());
}

double average_precision(const std::vector<char>& tp, int n_gt) {
  if (n_gt <= 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> precision(n);
  int cum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    cum += tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(cum) / static_cast<double>(k + 1);
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tp[k]) sum += precision[k];
  }
  return sum / static_cast<double>(n_gt);
}

namespace {

enum class Criterion { Iou, CenterDistance };

bool record_ranks_before(const BoxRecord& a, const BoxRecord& b) {
  if (a.box.score != b.box.score) return a.box.score > b.box.score;
  if (ranks_before(a.box, b.box)) return true;
  if (ranks_before(b.box, a.box)) return false;
  return std::tie(a.scene_id, a.agent_id) < std::tie(b.scene_id, b.agent_id);
}

EvalResult evaluate(const std::vector<BoxRecord>& preds, const std::vector<BoxRecord>& gts,
                    const std::vector<double>& thresholds, Criterion crit) {
  for (const auto& p : preds) p.box.validate();
  for (const auto& g : gts) g.box.validate();
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return record_ranks_before(preds[a], preds[b]); });

  // Similarity of every (pred, gt) pair from the same frame; higher is better.
  std::vector<std::vector<std::pair<std::size_t, double>>> candidates(preds.size());
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (preds[p].scene_id != gts[g].scene_id || preds[p].agent_id != gts[g].agent_id) continue;
      const double sim = crit == Criterion::Iou
                             ? bev_iou(preds[p].box, gts[g].box)
                             : -std::hypot(preds[p].box.cx - gts[g].box.cx, preds[p].box.cy - gts[g].box.cy);
      candidates[p].emplace_back(g, sim);
    }
  }

  EvalResult result;
  const int n_gt = static_cast<int>(gts.size());
  for (double thr : thresholds) {
    std::vector<char> taken(gts.size(), 0);
    std::vector<char> tp;
    tp.reserve(order.size());
    for (std::size_t p : order) {
      long best = -1;
      double best_sim = 0.0;
      for (const auto& [g, sim] : candidates[p]) {
        if (taken[g]) continue;
        const bool ok = crit == Criterion::Iou ? sim >= thr : -sim <= thr;
        if (ok && (best < 0 || sim > best_sim)) {
          best = static_cast<long>(g);
          best_sim = sim;
        }
      }
      if (best >= 0) taken[static_cast<std::size_t>(best)] = 1;
      tp.push_back(best >= 0 ? 1 : 0);
    }
    ThresholdResult r;
    r.threshold = thr;
    r.tp = static_cast<int>(std::count(tp.begin(), tp.end(), 1));
    r.fp = static_cast<int>(tp.size()) - r.tp;
    r.fn = n_gt - r.tp;
    r.ap = average_precision(tp, n_gt);
    result.per_threshold.push_back(r);
  }
  return result;
}

}  // namespace

EvalResult eval_ap(const std::vector<BoxRecord>& preds, const std::vector<BoxRecord>& gts,
                   const std::vector<double>& thresholds) {
  return evaluate(preds, gts, thresholds, Criterion::Iou);
}

EvalResult eval_center_distance_ap(const std::vector<BoxRecord>& preds, const std::vector<BoxRecord>& gts,
                                   const std::vector<double>& thresholds) {
  return evaluate(preds, gts, thresholds, Criterion::CenterDistance);
}

}  // namespace actbev::perception
