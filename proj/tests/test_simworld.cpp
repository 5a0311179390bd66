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
#include <filesystem>
#include <fstream>

#include "actbev/errors.hpp"
#include "actbev/ops.hpp"
#include "actbev/simworld.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace actbev;
using namespace actbev::sim;

namespace {

SceneObject box_at(int id, double x, double y, double yaw = 0.0) {
  SceneObject o;
  o.id = id;
  o.pose = HomTransform::from_yaw(yaw, {x, y, 0.0});
  return o;
}

/// One agent at the origin with a single forward camera (9x9 pixels, so the
/// centre pixel looks straight down the optical axis).
Scene corridor(std::vector<SceneObject> objects) {
  Scene s;
  Agent a;
  a.id = 0;
  a.rigs.push_back(make_rig(0, 0, 1, 1.0, geometry::CameraIntrinsics::from_fov(9, 9, 1.2)));
  s.agents.push_back(a);
  s.objects = std::move(objects);
  return s;
}

const double* pixel(const Tensor& t, int u, int v) { return t.data() + (static_cast<std::size_t>(v) * t.dim(1) + u) * 4; }

}  // namespace

TEST_CASE("scene config validation") {
  SceneConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.n_agents = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.fov_rad = 4.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(SceneConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK(SceneConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK(parse_layout(to_string(Layout::Grid)) == Layout::Grid);
  CHECK_THROWS_AS(parse_layout("spiral"), ConfigError);
}

TEST_CASE("scene generation is deterministic and respects placement rules") {
  SceneConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const Scene a = generate_scene(seed, cfg);
    const Scene b = generate_scene(seed, cfg);
    CHECK(scene_to_json(a) == scene_to_json(b));
    REQUIRE(a.agents.size() == static_cast<std::size_t>(cfg.n_agents));
    CHECK(a.objects.size() == static_cast<std::size_t>(cfg.n_objects));
    for (std::size_t i = 0; i < a.agents.size(); ++i) {
      const auto ti = a.agents[i].pose.translation();
      CHECK(std::abs(ti.x()) <= cfg.agent_half_extent);
      CHECK(std::abs(ti.y()) <= cfg.agent_half_extent);
      CHECK(a.agents[i].rigs.size() == static_cast<std::size_t>(cfg.cams_per_agent));
      for (std::size_t j = i + 1; j < a.agents.size(); ++j) {
        CHECK((ti - a.agents[j].pose.translation()).head<2>().norm() >= cfg.min_agent_distance);
      }
    }
    for (const auto& o : a.objects) {
      CHECK(o.length >= cfg.length_min);
      CHECK(o.length <= cfg.length_max);
      CHECK(std::abs(o.pose.translation().x()) <= cfg.world_half_extent);
    }
  }
  CHECK_FALSE(scene_to_json(generate_scene(1, cfg)) == scene_to_json(generate_scene(2, cfg)));
  auto crowded = cfg;
  crowded.n_agents = 40;
  crowded.max_attempts = 5;
  CHECK_THROWS_AS(generate_scene(1, crowded), ConfigError);
}

TEST_CASE("ray-box intersection agrees with ray marching") {
  Rng rng(51);
  int hits = 0;
  for (int i = 0; i < 400; ++i) {
    const auto obj = box_at(i, rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3));
    const geometry::Vec3 origin(rng.uniform(-15, 15), rng.uniform(-15, 15), rng.uniform(0.2, 2.5));
    geometry::Vec3 d;
    if (i % 2 == 0) {
      // Aimed at an interior point: both must hit.
      const geometry::Vec3 target = obj.pose.apply({rng.uniform(-1.5, 1.5), rng.uniform(-0.6, 0.6), rng.uniform(0.3, 1.2)});
      d = target - origin;
    } else {
      d = geometry::Vec3(rng.normal(), rng.normal(), 0.3 * rng.normal());
    }
    const double step = 1e-3;
    const auto exact = intersect_box(origin, d, obj);
    const auto marched = oracle::march(origin, d, obj, step / d.norm(), 3.0);
    if (i % 2 == 0) {
      REQUIRE(exact);
      REQUIRE(marched);
    }
    if (marched) {
      REQUIRE(exact);
      CHECK(exact->t <= *marched + 1e-12);
      CHECK(*marched - exact->t <= step / d.norm() + 1e-12);
      ++hits;
    }
  }
  CHECK(hits > 200);
  // Origin inside the box: no entry.
  CHECK_FALSE(intersect_box({0, 0, 0.5}, {1, 0, 0}, box_at(0, 0, 0)));
  // Pointing away.
  CHECK_FALSE(intersect_box({10, 0, 0.5}, {1, 0, 0}, box_at(0, 0, 0)));
}

TEST_CASE("ray casting reports the nearest object and its face") {
  const auto near = box_at(7, 10, 0);
  const auto far = box_at(8, 20, 0);
  const Scene s = corridor({far, near});
  const auto rig = s.agents[0].rigs[0];
  const auto ch = raycast_channels(s, rig);
  REQUIRE(ch.data.shape() == nn::Shape{9, 9, 4});
  const double* c = pixel(ch.data, 4, 4);
  CHECK(c[0] == doctest::Approx(1.0 / (10.0 - 0.5 * near.length)));
  CHECK(c[1] == 1.0);
  CHECK(std::abs(c[2]) == doctest::Approx(1.0));
  CHECK(c[3] == object_hash(7));
  // Removing the near object reveals the far one.
  const auto ch2 = raycast_channels(corridor({far}), rig);
  CHECK(pixel(ch2.data, 4, 4)[3] == object_hash(8));
  CHECK(pixel(ch2.data, 4, 4)[0] == doctest::Approx(1.0 / (20.0 - 0.5 * far.length)));
  // Nothing behind the camera is seen.
  const auto empty = raycast_channels(corridor({box_at(1, -10, 0)}), rig);
  for (double v : empty.data.span()) CHECK(v == 0.0);
  geometry::CameraRig stranger = rig;
  stranger.cam_id = 3;
  CHECK_THROWS_AS(raycast_channels(s, stranger), std::invalid_argument);
}

TEST_CASE("object hashes lie in [0.5, 1) and differ") {
  std::set<double> seen;
  for (int id = 0; id < 500; ++id) {
    const double h = object_hash(id);
    CHECK(h >= 0.5);
    CHECK(h < 1.0);
    seen.insert(h);
  }
  CHECK(seen.size() == 500);
}

TEST_CASE("ground truth is expressed in the ego frame and clipped to the grid") {
  Scene s = corridor({box_at(1, 10, 2, 0.4), box_at(2, 200, 0)});
  Agent other;
  other.id = 3;
  other.pose = HomTransform::from_yaw(std::numbers::pi / 2, {10, -5, 0});
  s.agents.push_back(other);
  geometry::BevGrid grid;
  const auto g0 = ground_truth(s, 0, grid);
  REQUIRE(g0.size() == 1);
  CHECK(g0[0].cx == doctest::Approx(10));
  CHECK(g0[0].cy == doctest::Approx(2));
  CHECK(g0[0].yaw == doctest::Approx(0.4));
  const auto g3 = ground_truth(s, 3, grid);
  REQUIRE(g3.size() == 1);
  CHECK(g3[0].cx == doctest::Approx(7));
  CHECK(g3[0].cy == doctest::Approx(0).epsilon(1e-9));
  CHECK(g3[0].yaw == doctest::Approx(0.4 - std::numbers::pi / 2));
  CHECK_THROWS_AS(ground_truth(s, 9, grid), std::out_of_range);
}

TEST_CASE("scene files round-trip and reject bad content") {
  const Scene s = generate_scene(9, SceneConfig{});
  const auto dir = std::filesystem::temp_directory_path() / "actbev_test_scene";
  std::filesystem::create_directories(dir);
  save_scene(dir / "s.json", s);
  const Scene back = load_scene(dir / "s.json");
  CHECK(scene_to_json(back) == scene_to_json(s));
  CHECK(back.agents[1].pose.matrix() == s.agents[1].pose.matrix());

  auto j = scene_to_json(s);
  j["schema_version"] = 99;
  CHECK_THROWS_AS(scene_from_json(j), IoError);
  j = scene_to_json(s);
  j.erase("objects");
  CHECK_THROWS_AS(scene_from_json(j), IoError);
  j = scene_to_json(s);
  j["agents"][1]["id"] = j["agents"][0]["id"];
  CHECK_THROWS_AS(scene_from_json(j), IoError);
  j = scene_to_json(s);
  j["objects"][0]["pose"][0] = 3.0;
  CHECK_THROWS_AS(scene_from_json(j), IoError);
  {
    std::ofstream out(dir / "broken.json");
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_scene(dir / "broken.json"), IoError);
  CHECK_THROWS_AS(load_scene(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("feature stem value and tape routes agree") {
  Rng rng(52);
  const Tensor raw = testutil::random_tensor({3, 4, 4}, rng);
  const auto p = nn::LinearParams::uniform_init(4, 6, rng);
  const Tensor a = feature_stem(raw, p);
  nn::Tape t;
  const auto b = feature_stem(t.constant(raw), t.constant(p.weight), t.constant(p.bias)).value();
  REQUIRE(a.numel() == b.numel());
  CHECK(nn::max_abs_diff(a.reshaped(b.shape()), b) < 1e-14);
  CHECK_THROWS_AS(feature_stem(testutil::random_tensor({3, 4, 5}, rng), p), std::invalid_argument);
}
