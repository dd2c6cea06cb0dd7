#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"
#include "mono4d/errors.hpp"
#include "mono4d/synth.hpp"

using namespace mono4d;

namespace {

synth::SceneSpec wall_only_dolly(double speed, int frames) {
  synth::SceneSpec spec;
  spec.frames = frames;
  spec.trajectory = synth::TrajectoryFamily::kDolly;
  spec.dolly_speed = speed;
  spec.intrinsics.fx = 100.0;
  spec.intrinsics.fy = 100.0;
  spec.intrinsics.cx = 64.0;
  spec.intrinsics.cy = 48.0;
  spec.intrinsics.width = 128;
  spec.intrinsics.height = 96;
  spec.wall_distance = 4.0;
  return spec;
}

}  // namespace

TEST_CASE("dolly toward a frontal wall renders the analytic depth at every pixel") {
  // The wall is z = 4 and the camera slides along +z without rotating, so the
  // z-normalized ray parameter equals 4 - speed * t exactly, at every pixel.
  synth::Scene scene(wall_only_dolly(0.02, 5));
  for (int t = 0; t < 5; ++t) {
    const synth::FrameRender fr = scene.render_frame(t);
    const double expected = 4.0 - 0.02 * t;
    for (double d : fr.depth.values) CHECK(d == doctest::Approx(expected).epsilon(1e-14));
    for (auto v : fr.depth.valid) CHECK(v == 1);
  }
}

TEST_CASE("a box in front of a wall produces depth steps at the analytic silhouette") {
  synth::SceneSpec spec = wall_only_dolly(0.0, 1);
  synth::Box box;
  box.center = Eigen::Vector3d(0.0, 0.0, 2.0);
  box.half_sizes = Eigen::Vector3d(0.5, 0.4, 0.1);
  spec.statics.push_back(box);

  const synth::FrameRender fr = synth::render_frame(spec, 0);
  // Pixel (r, c) sees the front face z = 1.9 iff its ray satisfies
  // |(c + 0.5 - cx) / fx * 1.9| <= 0.5 and likewise for rows with 0.4.
  int box_pixels = 0;
  for (int r = 0; r < 96; ++r) {
    for (int c = 0; c < 128; ++c) {
      const double x = (c + 0.5 - 64.0) / 100.0 * 1.9;
      const double y = (r + 0.5 - 48.0) / 100.0 * 1.9;
      const bool on_box = std::abs(x) <= 0.5 && std::abs(y) <= 0.4;
      const double d = fr.depth.at(r, c);
      if (on_box) {
        CHECK(d == doctest::Approx(1.9).epsilon(1e-14));
        ++box_pixels;
      } else {
        CHECK(d == doctest::Approx(4.0).epsilon(1e-14));
      }
    }
  }
  CHECK(box_pixels > 0);
}

TEST_CASE("rendered clouds equal the unprojection of the rendered depths") {
  const synth::SceneSpec spec = synth::preset_scene("static", 3, 4);
  const synth::Scene scene(spec);
  for (int t = 0; t < 4; ++t) {
    const synth::FrameRender fr = scene.render_frame(t);
    const core::FrameCloud up = core::unproject(fr.depth, spec.intrinsics);
    REQUIRE(up.size() == fr.cloud.size());
    for (std::size_t i = 0; i < up.size(); ++i) {
      CHECK(up.valid[i] == fr.cloud.valid[i]);
      if (up.valid[i]) {
        CHECK((up.points[i] - fr.cloud.points[i]).norm() <=
              1e-12 * (1.0 + fr.cloud.points[i].norm()));
      }
    }
  }
}

TEST_CASE("trajectories are anchored at the first frame and are orthonormal") {
  for (const char* name : {"static", "dynamic", "dolly", "orbit"}) {
    const synth::Scene scene(synth::preset_scene(name, 11, 12));
    const auto& poses = scene.poses();
    REQUIRE(poses.size() == 12);
    CHECK(poses[0].rotation.isApprox(Eigen::Matrix3d::Identity(), 0.0));
    CHECK(poses[0].translation.norm() == 0.0);
    for (const auto& pose : poses) CHECK(pose.orthonormality_error() < 1e-12);
  }
}

TEST_CASE("the same seed reproduces a scene bitwise and another seed does not") {
  const synth::SceneSpec spec_a = synth::preset_scene("static", 21, 6);
  const synth::SceneSpec spec_b = synth::preset_scene("static", 22, 6);

  const synth::OracleScene one = synth::Scene(spec_a).render_all(8);
  const synth::OracleScene two = synth::Scene(spec_a).render_all(8);
  const synth::OracleScene other = synth::Scene(spec_b).render_all(8);

  REQUIRE(one.depths.size() == two.depths.size());
  bool any_difference_to_other = false;
  for (std::size_t t = 0; t < one.depths.size(); ++t) {
    CHECK(one.depths[t].values == two.depths[t].values);
    CHECK(one.poses[t].rotation == two.poses[t].rotation);
    CHECK(one.poses[t].translation == two.poses[t].translation);
    if (one.depths[t].values != other.depths[t].values) any_difference_to_other = true;
  }
  CHECK(one.flows.size() == 5);
  for (std::size_t t = 0; t < one.flows.size(); ++t) {
    CHECK(one.flows[t].du == two.flows[t].du);
    CHECK(one.flows[t].valid == two.flows[t].valid);
  }
  CHECK(any_difference_to_other);
}

TEST_CASE("dense flow and sparse tracks agree wherever both are defined") {
  for (const char* name : {"static", "dynamic"}) {
    CAPTURE(name);
    const synth::Scene scene(synth::preset_scene(name, 5, 6));
    const corr::FlowField flow = scene.render_flow(0, 1);
    const synth::TrackBundle bundle = scene.render_tracks(16);
    const auto& tracks = bundle.tracks;

    int compared = 0;
    for (int n = 0; n < tracks.num_tracks; ++n) {
      if (!tracks.is_visible(n, 0)) continue;
      const Eigen::Vector2d p0 = tracks.at(n, 0);
      // Track seeds sit on exact pixel centers, so the flow pixel is exact.
      const int c = static_cast<int>(std::lround(p0.x() - 0.5));
      const int r = static_cast<int>(std::lround(p0.y() - 0.5));
      REQUIRE(c + 0.5 == p0.x());
      REQUIRE(r + 0.5 == p0.y());
      const std::size_t idx = flow.index(r, c);
      CHECK(tracks.is_visible(n, 1) == (flow.valid[idx] != 0));
      if (!tracks.is_visible(n, 1) || !flow.valid[idx]) continue;
      const Eigen::Vector2d p1 = tracks.at(n, 1);
      CHECK(std::abs(p1.x() - (p0.x() + flow.du[idx])) < 1e-9);
      CHECK(std::abs(p1.y() - (p0.y() + flow.dv[idx])) < 1e-9);
      ++compared;
    }
    CHECK(compared > 100);
  }
}

TEST_CASE("forward dolly occludes wall pixels at the growing silhouette and drops border pixels") {
  synth::SceneSpec spec = wall_only_dolly(0.1, 2);
  synth::Box box;
  box.center = Eigen::Vector3d(0.0, 0.0, 2.0);
  box.half_sizes = Eigen::Vector3d(0.5, 0.4, 0.1);
  spec.statics.push_back(box);
  const corr::FlowField flow = synth::render_flow(spec, 0, 1);

  // Row through the box center. Frame 0: the box front face (z = 1.9) covers
  // |u - cx| <= 100 * 0.5 / 1.9 = 26.32 px. Frame 1 (camera at z = 0.1): the
  // silhouette widens to 100 * 0.5 / 1.8 = 27.78 px while a wall point at
  // offset du projects to du * 4 / 3.9. Wall pixels with du in
  // (26.32, 27.78 * 3.9 / 4 = 27.08) become occluded.
  const int r = 47;  // v = 47.5, inside the box rows
  auto u_rel = [](int c) { return std::abs(c + 0.5 - 64.0); };
  for (int c = 64; c < 128; ++c) {
    const double du = u_rel(c);
    if (du > 26.32 && du < 27.08) {
      CHECK(flow.valid[flow.index(r, c)] == 0);  // freshly occluded wall
    } else if (du < 26.0 || (du > 27.78 && du < 58.0)) {
      CHECK(flow.valid[flow.index(r, c)] == 1);  // box interior or safe wall
    }
  }
  // Far border wall pixels leave the image: u_rel = 63.5 maps to 65.1 > 64.
  CHECK(flow.valid[flow.index(0, 0)] == 0);
  CHECK(flow.valid[flow.index(0, 127)] == 0);
  CHECK(flow.valid[flow.index(48, 64)] == 1);
}

TEST_CASE("the dynamic preset produces a moving binary silhouette of bounded area") {
  const synth::Scene scene(synth::preset_scene("dynamic", 9, 40));
  double first_centroid_u = 0.0;
  double last_centroid_u = 0.0;
  for (int t = 0; t < 40; ++t) {
    const synth::FrameRender fr = scene.render_frame(t);
    double area = 0.0;
    double centroid_u = 0.0;
    for (int r = 0; r < fr.depth.height; ++r) {
      for (int c = 0; c < fr.depth.width; ++c) {
        const double m = fr.dynamic_mask.at(r, c);
        CHECK((m == 0.0 || m == 1.0));
        area += m;
        centroid_u += m * (c + 0.5);
      }
    }
    REQUIRE(area > 0.0);
    centroid_u /= area;
    const double fraction = area / static_cast<double>(fr.depth.size());
    CHECK(fraction > 0.01);
    CHECK(fraction < 0.40);
    if (t == 0) first_centroid_u = centroid_u;
    if (t == 39) last_centroid_u = centroid_u;
  }
  // The object drifts toward +x, so its silhouette centroid moves right.
  CHECK(last_centroid_u - first_centroid_u > 5.0);
}

TEST_CASE("static tracks keep their world points and some wall track gets covered") {
  const synth::Scene scene(synth::preset_scene("dynamic", 9, 40));
  const synth::TrackBundle bundle = scene.render_tracks(24);
  const synth::FrameRender fr0 = scene.render_frame(0);

  bool saw_dynamic_track = false;
  bool saw_coverage_change = false;
  for (int n = 0; n < bundle.tracks.num_tracks; ++n) {
    if (!bundle.tracks.is_visible(n, 0)) continue;
    const Eigen::Vector2d p0 = bundle.tracks.at(n, 0);
    const int c = static_cast<int>(p0.x() - 0.5);
    const int r = static_cast<int>(p0.y() - 0.5);
    const bool dynamic_seed = fr0.dynamic_mask.at(r, c) == 1.0;
    const auto& world = bundle.world_points[static_cast<std::size_t>(n)];
    double max_drift = 0.0;
    for (int t = 1; t < 40; ++t) max_drift = std::max(max_drift, (world[t] - world[0]).norm());
    if (dynamic_seed) {
      saw_dynamic_track = true;
      CHECK(max_drift > 0.1);  // carried by the object's motion
    } else {
      CHECK(max_drift == 0.0);  // static geometry never moves
      bool invisible_somewhere = false;
      for (int t = 0; t < 40; ++t) {
        if (!bundle.tracks.is_visible(n, t)) invisible_somewhere = true;
      }
      if (invisible_somewhere) saw_coverage_change = true;
    }
  }
  CHECK(saw_dynamic_track);
  CHECK(saw_coverage_change);  // the moving panel sweeps over background tracks
}

TEST_CASE("orbit cameras all aim at the target point") {
  synth::SceneSpec spec = synth::preset_scene("orbit", 1, 9);
  const synth::Scene scene(spec);
  // After anchoring, the world frame is camera 0's frame, where the target
  // lies on the optical axis at the orbit radius.
  const Eigen::Vector3d target(0.0, 0.0, spec.orbit_radius);
  for (const auto& pose : scene.poses()) {
    const Eigen::Vector3d cam = pose.inverse().apply(target);
    CHECK(std::abs(cam.x()) < 1e-9);
    CHECK(std::abs(cam.y()) < 1e-9);
    CHECK(cam.z() == doctest::Approx(spec.orbit_radius).epsilon(1e-9));
  }
}

TEST_CASE("scene validation rejects malformed specs and unknown presets") {
  CHECK_THROWS_AS(synth::preset_scene("nope"), InputShapeError);
  CHECK_THROWS_WITH(synth::preset_scene("nope"),
                    doctest::Contains("nope"));

  synth::SceneSpec spec = synth::preset_scene("static");
  spec.frames = 0;
  CHECK_THROWS_AS(synth::Scene{spec}, InputShapeError);

  synth::SceneSpec bad_box = synth::preset_scene("static");
  bad_box.statics[0].half_sizes.x() = -1.0;
  CHECK_THROWS_AS(synth::Scene{bad_box}, InputShapeError);

  synth::SceneSpec bad_wall = synth::preset_scene("static");
  bad_wall.wall_distance = 0.0;
  CHECK_THROWS_AS(synth::Scene{bad_wall}, InputShapeError);

  CHECK_THROWS_AS(synth::render_flow(synth::preset_scene("static", 1, 3), 0, 3),
                  InputShapeError);
}

TEST_CASE("flying-pixel masking of a rendered frame zeroes exactly the silhouette flanks") {
  const synth::SceneSpec spec = synth::preset_scene("static", 2, 1);
  const synth::FrameRender fr = synth::render_frame(spec, 0);
  const corr::ConfidenceMask mask = corr::flying_pixel_mask(fr.depth, corr::kFlyingPixelRelThreshold);

  std::size_t zeros = 0;
  for (int r = 0; r < fr.depth.height; ++r) {
    for (int c = 0; c < fr.depth.width; ++c) {
      const double m = mask.at(r, c);
      CHECK((m == 0.0 || m == 1.0));
      if (m == 1.0) continue;
      ++zeros;
      // A zeroed pixel must have a large relative depth jump to some 8-neighbor.
      double max_rel = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= fr.depth.height ||
              cc >= fr.depth.width) {
            continue;
          }
          max_rel = std::max(max_rel,
                             std::abs(fr.depth.at(rr, cc) - fr.depth.at(r, c)) / fr.depth.at(r, c));
        }
      }
      CHECK(max_rel > corr::kFlyingPixelRelThreshold);
    }
  }
  CHECK(zeros > 0);
  CHECK(zeros < fr.depth.size() / 4);
}
