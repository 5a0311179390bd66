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

#include "actbev/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "actbev/errors.hpp"

namespace actbev::perception {

void DetectionBox::validate() const {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(yaw)) throw GeometryError("box has non-finite pose");
  if (!(length > 0.0) || !(width > 0.0) || !std::isfinite(length) || !std::isfinite(width)) {
    throw GeometryError("box extents must be positive and finite");
  }
  if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("box score outside [0, 1]");
}

std::array<Point2, 4> corners(const DetectionBox& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double hl = 0.5 * b.length;
  const double hw = 0.5 * b.width;
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Point2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.cx + c * local[i][0] - s * local[i][1], b.cy + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

double polygon_area(const std::vector<Point2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

namespace {

double cross(const Point2& a, const Point2& b, const Point2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

Point2 intersect(const Point2& p, const Point2& q, const Point2& a, const Point2& b) {
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

// Sutherland-Hodgman against each edge of the convex clip polygon.
std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip) {
  std::vector<Point2> out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % clip.size()];
    std::vector<Point2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point2& p = in[i];
      const Point2& q = in[(i + 1) % in.size()];
      const bool p_in = cross(a, b, p) >= 0.0;
      const bool q_in = cross(a, b, q) >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) out.push_back(intersect(p, q, a, b));
    }
  }
  return out;
}

double bev_iou(const DetectionBox& a, const DetectionBox& b) {
  a.validate();
  b.validate();
  const auto ca = corners(a);
  const auto cb = corners(b);
  const std::vector<Point2> pa(ca.begin(), ca.end());
  const std::vector<Point2> pb(cb.begin(), cb.end());
  const double area_a = a.length * a.width;
  const double area_b = b.length * b.width;
  const auto inter_poly = clip_convex(pa, pb);
  const double inter = inter_poly.size() < 3 ? 0.0 : std::max(0.0, polygon_area(inter_poly));
  const double uni = area_a + area_b - inter;
  if (!(uni > 0.0)) throw GeometryError("degenerate box union");
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool ranks_before(const DetectionBox& a, const DetectionBox& b) {
  return std::tie(b.score, a.cx, a.cy, a.length, a.width, a.yaw) <
         std::tie(a.score, b.cx, b.cy, b.length, b.width, b.yaw);
}

std::vector<DetectionBox> nms(std::vector<DetectionBox> boxes, double iou_threshold) {
  std::sort(boxes.begin(), boxes.end(), ranks_before);
  std::vector<DetectionBox> kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (bev_iou(b, k) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

}  // namespace actbev::perception
