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
/// BEV rectangles, rotated-rectangle IoU and non-maximum suppression.

#include <array>
#include <vector>

namespace actbev::perception {

/// Ego-frame BEV box. yaw measured from +x towards +y.
struct DetectionBox {
  double cx = 0.0;
  double cy = 0.0;
  double length = 1.0;
  double width = 1.0;
  double yaw = 0.0;
  double score = 1.0;

  /// Throws GeometryError for non-positive or non-finite extents and
  /// std::invalid_argument for a score outside [0, 1].
  void validate() const;
  bool operator==(const DetectionBox&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Counter-clockwise corners.
std::array<Point2, 4> corners(const DetectionBox& b);

/// Signed area (positive for counter-clockwise order).
double polygon_area(const std::vector<Point2>& poly);

/// Intersection of two convex counter-clockwise polygons.
std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip);

/// Rotated-rectangle IoU in the BEV plane. Throws GeometryError for a
/// zero-area box.
double bev_iou(const DetectionBox& a, const DetectionBox& b);

/// Strict total order used for ranking: score descending, then box fields.
bool ranks_before(const DetectionBox& a, const DetectionBox& b);

/// Greedy NMS: keeps boxes in rank order and drops any box whose IoU with a
/// kept box exceeds iou_threshold.
std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iou_threshold = 0.5);

}  // namespace actbev::perception
