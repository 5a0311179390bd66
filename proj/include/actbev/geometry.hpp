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
 * @file geometry.hpp
 * @brief Rigid transforms, pinhole projection, BEV reference pillars and
 *        camera hit sets.
 *
 * Frame conventions:
 * - Ego / car frame: x forward, y left, z up (meters).
 * - Camera frame: z along the optical axis, x right, y down.
 * - Pixel (u, v): u indexes feature-map columns, v rows. Feature cell
 *   (row i, col j) sits exactly at (u = j, v = i).
 */

#include <array>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Core>

namespace actbev::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid 4x4 homogeneous transform. Construction validates the invariants
/// (orthonormal rotation, det +1, bottom row 0 0 0 1), so every instance is
/// a proper rigid motion.
class HomTransform {
 public:
  HomTransform() : m_(Mat4::Identity()) {}

  static HomTransform identity() { return {}; }
  /// Throws GeometryError if `m` is not a rigid transform (tolerance 1e-6).
  static HomTransform from_matrix(const Mat4& m);
  static HomTransform from_rotation_translation(const Mat3& r, const Vec3& t);
  static HomTransform from_translation(const Vec3& t);
  /// Planar pose: rotation about +z by `yaw`, then translation.
  static HomTransform from_yaw(double yaw, const Vec3& t);
  /// Row-major 16 values, the on-disk layout.
  static HomTransform from_row_major(const std::array<double, 16>& v);

  const Mat4& matrix() const { return m_; }
  Mat3 rotation() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return m_.topRightCorner<3, 1>(); }
  std::array<double, 16> row_major() const;

  Vec3 apply(const Vec3& p) const { return rotation() * p + translation(); }
  /// Heading of the x axis in the parent frame.
  double yaw() const;

 private:
  explicit HomTransform(const Mat4& m) : m_(m) {}
  Mat4 m_;
};

/// a * b
HomTransform compose(const HomTransform& a, const HomTransform& b);
/// Rigid inverse (R^T, -R^T t).
HomTransform invert(const HomTransform& t);

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Square pixels, horizontal field of view `fov_rad`, principal point at
  /// the image center in the sample-at-integer convention.
  static CameraIntrinsics from_fov(int width, int height, double fov_rad);
  /// Throws GeometryError on fx/fy <= 0 or empty image.
  void validate() const;
};

struct CameraKey {
  int car_id = 0;
  int cam_id = 0;
  auto operator<=>(const CameraKey&) const = default;
};

struct CameraRig {
  int car_id = 0;
  int cam_id = 0;
  HomTransform extrinsic;  // car-from-camera
  CameraIntrinsics intrinsics;

  CameraKey key() const { return {car_id, cam_id}; }
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// One BEV cell; x_idx runs along the ego x axis (columns of the query grid),
/// y_idx along y (rows).
struct BevCell {
  int x_idx = 0;
  int y_idx = 0;
};

struct BevGrid {
  int h_cells = 32;
  int w_cells = 32;
  double x_min = -51.2;
  double x_max = 51.2;
  double y_min = -51.2;
  double y_max = 51.2;
  std::vector<double> z_refs{0.25, 0.75, 1.25, 1.75};

  void validate() const;
  int n_ref() const { return static_cast<int>(z_refs.size()); }
  int n_cells() const { return h_cells * w_cells; }
  double cell_size_x() const { return (x_max - x_min) / w_cells; }
  double cell_size_y() const { return (y_max - y_min) / h_cells; }
  /// Flat index, row-major over (y_idx, x_idx).
  int flat(BevCell c) const { return c.y_idx * w_cells + c.x_idx; }
  BevCell cell(int flat_index) const { return {flat_index % w_cells, flat_index / w_cells}; }
  /// Metric center of a cell; throws std::out_of_range for bad indices.
  Eigen::Vector2d cell_center(BevCell c) const;
  bool contains(double x, double y) const;
};

/// Pinhole projection of an ego-frame point. Absent when the point is behind
/// the camera or lands outside [0, width) x [0, height).
std::optional<PixelPoint> project_point(const HomTransform& cam_from_ego, const CameraIntrinsics& k,
                                        const Vec3& p_ego);

/// Same projection without the image-bounds test (depth must still be > 0).
std::optional<PixelPoint> project_unbounded(const HomTransform& cam_from_ego, const CameraIntrinsics& k,
                                            const Vec3& p_ego);

/// The N_ref points (x, y, z_j) above the center of a cell.
std::vector<Vec3> reference_pillar(const BevGrid& grid, int x_idx, int y_idx);

/// Poses of every car expressed in the ego frame (ego_from_car).
using AgentPoses = std::map<int, HomTransform>;

/// Ego-from-camera chain for a rig, T'_k * T_i.
HomTransform ego_from_camera(const CameraRig& rig, const AgentPoses& poses);

/// Cameras whose view contains at least one pillar point of the cell.
std::set<CameraKey> hit_set(BevCell q, const std::vector<CameraRig>& rigs, const AgentPoses& poses,
                            const BevGrid& grid);

}  // namespace actbev::geometry
