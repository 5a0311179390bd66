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
/// Average precision over BEV detections, matched by IoU or center distance.

#include <map>
#include <vector>

#include "actbev/boxes.hpp"

namespace actbev::perception {

/// One box tagged with the frame it belongs to. Predictions only match ground
/// truth of the same (scene_id, agent_id).
struct BoxRecord {
  int scene_id = 0;
  int agent_id = 0;
  DetectionBox box;
};

struct ThresholdResult {
  double threshold = 0.0;
  double ap = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct EvalResult {
  std::vector<ThresholdResult> per_threshold;

  /// Throws std::out_of_range for a threshold that was not evaluated.
  const ThresholdResult& at(double threshold) const;
  double ap(double threshold) const { return at(threshold).ap; }
  /// Mean AP over all thresholds.
  double mean_ap() const;
};

inline const std::vector<double> kIouThresholds{0.5, 0.7};
inline const std::vector<double> kCenterDistanceThresholds{0.5, 1.0, 2.0, 4.0};

/// Score-ranked greedy matching: each prediction takes the unmatched
/// same-frame ground truth with the highest IoU >= threshold. AP is the
/// all-point area under the interpolated precision/recall curve. AP is 0 when
/// there is no ground truth.
EvalResult eval_ap(const std::vector<BoxRecord>& preds, const std::vector<BoxRecord>& gts,
                   const std::vector<double>& thresholds = kIouThresholds);

/// As eval_ap with the match criterion "center distance <= threshold" and the
/// nearest unmatched ground truth taken.
EvalResult eval_center_distance_ap(const std::vector<BoxRecord>& preds, const std::vector<BoxRecord>& gts,
                                   const std::vector<double>& thresholds = kCenterDistanceThresholds);

/// AP from a ranked TP flag sequence and the ground-truth count.
double average_precision(const std::vector<char>& tp_in_rank_order, int n_gt);

}  // namespace actbev::perception
