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

#include "actbev/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/LU>

#include "actbev/errors.hpp"

namespace actbev::geometry {

namespace {

constexpr double kRigidTol = 1e-6;

void check_rigid(const Mat4& m) {
  for (int c = 0; c < 4; ++c) {
    if (!std::isfinite(m(0, c)) || !std::isfinite(m(1, c)) || !std::isfinite(m(2, c)) || !std::isfinite(m(3, c))) {
      throw GeometryError("transform has non-finite entries");
    }
  }
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
    throw GeometryError("transform bottom row must be exactly (0, 0, 0, 1)");
  }
  const Mat3 r = m.topLeftCorner<3, 3>();
  const double ortho_err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > kRigidTol) {
    throw GeometryError("rotation block is not orthonormal (err " + std::to_string(ortho_err) + ")");
  }
  if (r.determinant() <= 0.0) {
    throw GeometryError("rotation block has negative determinant");
  }
}

}  // namespace

HomTransform HomTransform::from_matrix(const Mat4& m) {
  check_rigid(m);
  return HomTransform(m);
}

HomTransform HomTransform::from_rotation_translation(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return from_matrix(m);
}

HomTransform HomTransform::from_translation(const Vec3& t) {
  return from_rotation_translation(Mat3::Identity(), t);
}

HomTransform HomTransform::from_yaw(double yaw, const Vec3& t) {
  Mat3 r = Mat3::Identity();
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return from_rotation_translation(r, t);
}

HomTransform HomTransform::from_row_major(const std::array<double, 16>& v) {
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<size_t>(r * 4 + c)];
  return from_matrix(m);
}

std::array<double, 16> HomTransform::row_major() const {
  std::array<double, 16> out{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[static_cast<size_t>(r * 4 + c)] = m_(r, c);
  return out;
}

double HomTransform::yaw() const { return std::atan2(m_(1, 0), m_(0, 0)); }

HomTransform compose(const HomTransform& a, const HomTransform& b) {
  // The product of two rigid transforms is rigid up to rounding; rebuilding
  // through from_rotation_translation keeps the bottom row exact.
  const Mat4 p = a.matrix() * b.matrix();
  return HomTransform::from_rotation_translation(p.topLeftCorner<3, 3>(), p.topRightCorner<3, 1>());
}

HomTransform invert(const HomTransform& t) {
  const Mat3 rt = t.rotation().transpose();
  return HomTransform::from_rotation_translation(rt, -(rt * t.translation()));
}

CameraIntrinsics CameraIntrinsics::from_fov(int width, int height, double fov_rad) {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = 0.5 * width / std::tan(0.5 * fov_rad);
  k.fy = k.fx;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.validate();
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw GeometryError("focal lengths must be positive");
  if (width < 1 || height < 1) throw GeometryError("image size must be at least 1x1");
}

void BevGrid::validate() const {
  if (h_cells < 1 || w_cells < 1) throw GeometryError("BEV grid needs at least one cell");
  if (!(x_max > x_min) || !(y_max > y_min)) throw GeometryError("BEV range is degenerate");
  if (z_refs.empty()) throw GeometryError("BEV grid needs at least one reference height");
}

Eigen::Vector2d BevGrid::cell_center(BevCell c) const {
  if (c.x_idx < 0 || c.x_idx >= w_cells || c.y_idx < 0 || c.y_idx >= h_cells) {
    throw std::out_of_range("BEV cell index out of range");
  }
  return {x_min + (c.x_idx + 0.5) * cell_size_x(), y_min + (c.y_idx + 0.5) * cell_size_y()};
}

bool BevGrid::contains(double x, double y) const {
  return x >= x_min && x < x_max && y >= y_min && y < y_max;
}

std::optional<PixelPoint> project_unbounded(const HomTransform& cam_from_ego, const CameraIntrinsics& k,
                                            const Vec3& p_ego) {
  const Vec3 pc = cam_from_ego.apply(p_ego);
  if (!(pc.z() > 0.0)) return std::nullopt;
  return PixelPoint{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy, pc.z()};
}

std::optional<PixelPoint> project_point(const HomTransform& cam_from_ego, const CameraIntrinsics& k,
                                        const Vec3& p_ego) {
  auto p = project_unbounded(cam_from_ego, k, p_ego);
  if (!p) return std::nullopt;
  if (p->u < 0.0 || p->u >= k.width || p->v < 0.0 || p->v >= k.height) return std::nullopt;
  return p;
}

std::vector<Vec3> reference_pillar(const BevGrid& grid, int x_idx, int y_idx) {
  const Eigen::Vector2d c = grid.cell_center({x_idx, y_idx});
  std::vector<Vec3> pts;
  pts.reserve(grid.z_refs.size());
  for (double z : grid.z_refs) pts.emplace_back(c.x(), c.y(), z);
  return pts;
}

HomTransform ego_from_camera(const CameraRig& rig, const AgentPoses& poses) {
  const auto it = poses.find(rig.car_id);
  if (it == poses.end()) throw GeometryError("no pose for car " + std::to_string(rig.car_id));
  return compose(it->second, rig.extrinsic);
}

std::set<CameraKey> hit_set(BevCell q, const std::vector<CameraRig>& rigs, const AgentPoses& poses,
                            const BevGrid& grid) {
  const auto pillar = reference_pillar(grid, q.x_idx, q.y_idx);
  std::set<CameraKey> hits;
  for (const auto& rig : rigs) {
    const HomTransform cam_from_ego = invert(ego_from_camera(rig, poses));
    for (const auto& p : pillar) {
      if (project_point(cam_from_ego, rig.intrinsics, p)) {
        hits.insert(rig.key());
        break;
      }
    }
  }
  return hits;
}

}  // namespace actbev::geometry
