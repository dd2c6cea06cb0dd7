#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "mono4d/core.hpp"
#include "mono4d/errors.hpp"
#include "mono4d/eval.hpp"
#include "mono4d/parallel.hpp"
#include "mono4d/synth.hpp"
#include "test_util.hpp"

using namespace mono4d;

namespace {

// Deliberately naive reference implementations: exhaustive scans and direct
// formula transcriptions, sharing no code with the library.

double brute_nearest(const std::vector<Eigen::Vector3d>& set, const Eigen::Vector3d& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : set) best = std::min(best, (p - q).squaredNorm());
  return std::sqrt(best);
}

double brute_chamfer_mm(const std::vector<Eigen::Vector3d>& pred,
                        const std::vector<Eigen::Vector3d>& gt) {
  KahanSum to_pred, to_gt;
  for (const auto& g : gt) to_pred.add(brute_nearest(pred, g));
  for (const auto& p : pred) to_gt.add(brute_nearest(gt, p));
  return (to_pred.value() / double(gt.size()) + to_gt.value() / double(pred.size())) * 1000.0;
}

double brute_fscore(const std::vector<Eigen::Vector3d>& pred,
                    const std::vector<Eigen::Vector3d>& gt, double delta_cm) {
  const double delta = delta_cm / 100.0;
  std::size_t pred_hit = 0, gt_hit = 0;
  for (const auto& p : pred) pred_hit += (brute_nearest(gt, p) <= delta) ? 1 : 0;
  for (const auto& g : gt) gt_hit += (brute_nearest(pred, g) <= delta) ? 1 : 0;
  const double precision = double(pred_hit) / double(pred.size());
  const double recall = double(gt_hit) / double(gt.size());
  if (precision + recall == 0.0) return 0.0;
  return 200.0 * precision * recall / (precision + recall);
}

std::vector<Eigen::Vector3d> random_cloud(std::mt19937_64& rng, std::size_t max_points,
                                          double span) {
  std::uniform_int_distribution<std::size_t> count(1, max_points);
  std::uniform_real_distribution<double> u(-span, span);
  std::vector<Eigen::Vector3d> out(count(rng));
  for (auto& p : out) p = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return out;
}

core::CloudSequence oracle_sequence(const synth::OracleScene& scene) {
  return core::assemble_global(scene.clouds, scene.poses, scene.intrinsics);
}

core::CloudSequence transformed_copy(const core::CloudSequence& seq,
                                     const align::SimTransform& s) {
  core::CloudSequence out = seq;
  for (auto& frame : out.frames) {
    for (std::size_t k = 0; k < frame.size(); ++k) {
      if (frame.valid[k]) frame.points[k] = s.apply(frame.points[k]);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("grid-backed Chamfer and F-score match exhaustive scans") {
  std::mt19937_64 rng(2025);
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    // Alternate between spread-out and tightly clustered clouds to exercise
    // both sparse and dense grid occupancies.
    const double span = (trial % 2 == 0) ? 2.0 : 0.03;
    const auto pred = random_cloud(rng, 500, span);
    const auto gt = random_cloud(rng, 500, span);
    CHECK(eval::chamfer_mm(pred, gt) == doctest::Approx(brute_chamfer_mm(pred, gt)).epsilon(1e-12));
    for (double delta_cm : {1.0, 2.5, 5.0}) {
      CHECK(eval::fscore(pred, gt, delta_cm) == brute_fscore(pred, gt, delta_cm));
    }
  }
}

TEST_CASE("nearest-neighbor grid handles degenerate layouts") {
  const std::vector<Eigen::Vector3d> single{{1.0, 2.0, 3.0}};
  const eval::NearestNeighborGrid one(single);
  CHECK(one.nearest_distance({1.0, 2.0, 3.0}) == 0.0);
  CHECK(one.nearest_distance({1.0, 2.0, 13.0}) == doctest::Approx(10.0));

  const std::vector<Eigen::Vector3d> coincident(7, Eigen::Vector3d(0.5, 0.5, 0.5));
  const eval::NearestNeighborGrid same(coincident);
  CHECK(same.nearest_distance({0.5, 0.5, 0.5}) == 0.0);
  CHECK(same.nearest_distance({-99.5, 0.5, 0.5}) == doctest::Approx(100.0));

  // Collinear points: two grid axes collapse to a single cell.
  std::vector<Eigen::Vector3d> line;
  for (int i = 0; i < 100; ++i) line.emplace_back(0.1 * i, 0.0, 0.0);
  const eval::NearestNeighborGrid line_grid(line);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-12.0, 12.0);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Vector3d q(u(rng), u(rng), u(rng));
    CHECK(line_grid.nearest_distance(q) == doctest::Approx(brute_nearest(line, q)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(eval::NearestNeighborGrid(std::vector<Eigen::Vector3d>{}), InputShapeError);
}

TEST_CASE("Chamfer analytic values and invariances") {
  const std::vector<Eigen::Vector3d> a{{0.0, 0.0, 0.0}};
  const std::vector<Eigen::Vector3d> b{{0.0, 0.0, 0.003}};
  CHECK(eval::chamfer_mm(a, b) == doctest::Approx(6.0).epsilon(1e-12));

  std::mt19937_64 rng(11);
  const auto pred = random_cloud(rng, 300, 1.0);
  const auto gt = random_cloud(rng, 300, 1.0);
  CHECK(eval::chamfer_mm(pred, pred) == 0.0);
  CHECK(eval::fscore(pred, pred, 1.0) == 100.0);
  CHECK(eval::chamfer_mm(pred, gt) == eval::chamfer_mm(gt, pred));  // symmetric

  // Joint rigid motion leaves both metrics unchanged.
  const Eigen::Matrix3d r = testutil::random_rotation(rng);
  const Eigen::Vector3d t(0.3, -1.1, 0.7);
  auto pred_moved = pred;
  auto gt_moved = gt;
  for (auto& p : pred_moved) p = r * p + t;
  for (auto& g : gt_moved) g = r * g + t;
  CHECK(eval::chamfer_mm(pred_moved, gt_moved) ==
        doctest::Approx(eval::chamfer_mm(pred, gt)).epsilon(1e-9));
  CHECK(eval::fscore(pred_moved, gt_moved, 2.5) ==
        doctest::Approx(eval::fscore(pred, gt, 2.5)).epsilon(1e-9));

  // F-score grows with the threshold and hits the extremes.
  const double f1 = eval::fscore(pred, gt, 1.0);
  const double f2_5 = eval::fscore(pred, gt, 2.5);
  const double f5 = eval::fscore(pred, gt, 5.0);
  CHECK(f1 <= f2_5);
  CHECK(f2_5 <= f5);
  std::vector<Eigen::Vector3d> far = gt;
  for (auto& g : far) g.x() += 10.0;
  CHECK(eval::fscore(pred, far, 5.0) == 0.0);

  CHECK_THROWS_AS(eval::chamfer_mm({}, gt), InputShapeError);
  CHECK_THROWS_AS(eval::fscore(pred, gt, 0.0), InputShapeError);
}

TEST_CASE("evaluation alignment recovers the transform separating the sequences") {
  const synth::OracleScene scene = synth::Scene(synth::preset_scene("static", 5, 3)).render_all(6);
  const core::CloudSequence gt = oracle_sequence(scene);

  const align::SimTransform id = eval::align_for_eval(gt, gt, eval::AlignMode::kGlobal);
  CHECK(std::abs(id.scale - 1.0) < 1e-9);
  CHECK(testutil::rotation_angle(id.rotation, Eigen::Matrix3d::Identity()) < 1e-9);
  CHECK(id.translation.norm() < 1e-9);

  std::mt19937_64 rng(3);
  align::SimTransform s;
  s.scale = 0.4;
  s.rotation = testutil::random_rotation(rng);
  s.translation = Eigen::Vector3d(1.0, 2.0, -0.5);
  const core::CloudSequence pred = transformed_copy(gt, s);
  const align::SimTransform recovered = eval::align_for_eval(pred, gt, eval::AlignMode::kGlobal);
  const align::SimTransform expected = s.inverse();
  CHECK(std::abs(recovered.scale - expected.scale) < 1e-9);
  CHECK(testutil::rotation_angle(recovered.rotation, expected.rotation) < 1e-9);
  CHECK((recovered.translation - expected.translation).norm() < 1e-9);

  // With one frame the two modes run over the same correspondences.
  core::CloudSequence pred1, gt1;
  pred1.intrinsics = gt1.intrinsics = scene.intrinsics;
  pred1.frames = {pred.frames[0]};
  pred1.poses = {pred.poses[0]};
  gt1.frames = {gt.frames[0]};
  gt1.poses = {gt.poses[0]};
  const align::SimTransform global1 = eval::align_for_eval(pred1, gt1, eval::AlignMode::kGlobal);
  const align::SimTransform first1 = eval::align_for_eval(pred1, gt1, eval::AlignMode::kFirstFrame);
  CHECK(global1.scale == first1.scale);
  CHECK(global1.rotation == first1.rotation);
  CHECK(global1.translation == first1.translation);

  core::CloudSequence short_gt = gt;
  short_gt.frames.pop_back();
  short_gt.poses.pop_back();
  try {
    eval::align_for_eval(pred, short_gt, eval::AlignMode::kGlobal);
    FAIL("expected InputShapeError");
  } catch (const InputShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("3 frames") != std::string::npos);
    CHECK(what.find("2") != std::string::npos);
  }
}

TEST_CASE("pointcloud metrics absorb any pre-applied scaled rigid transform") {
  const synth::OracleScene scene = synth::Scene(synth::preset_scene("static", 9, 3)).render_all(6);
  const core::CloudSequence gt = oracle_sequence(scene);

  const eval::MetricReport self = eval::pointcloud_metrics(gt, gt, eval::AlignMode::kGlobal);
  CHECK(self.cd_mm < 1e-9);
  CHECK(self.f1 == 100.0);
  CHECK(self.f5 == 100.0);

  std::mt19937_64 rng(23);
  align::SimTransform s;
  s.scale = 2.3;
  s.rotation = testutil::random_rotation(rng);
  s.translation = Eigen::Vector3d(-0.2, 0.9, 1.4);
  const core::CloudSequence pred = transformed_copy(gt, s);
  const eval::MetricReport aligned = eval::pointcloud_metrics(pred, gt, eval::AlignMode::kGlobal);
  CHECK(std::abs(aligned.cd_mm - self.cd_mm) < 1e-6);
  CHECK(std::abs(aligned.f1 - self.f1) < 1e-6);
  CHECK(std::abs(aligned.f2_5 - self.f2_5) < 1e-6);
  CHECK(std::abs(aligned.f5 - self.f5) < 1e-6);
}

TEST_CASE("scene flow recovery reproduces analytic trajectories") {
  const synth::OracleScene scene =
      synth::Scene(synth::preset_scene("dynamic", 4, 6)).render_all(20);
  const core::CloudSequence seq = oracle_sequence(scene);
  const corr::TrackSet kept = eval::filter_flying_tracks(scene.tracks.tracks, scene.depths);
  REQUIRE(kept.num_tracks > 100);

  // Map each kept track back to its row in the full bundle to reach the
  // analytic world positions.
  std::vector<int> origin;
  {
    const corr::TrackSet& all = scene.tracks.tracks;
    const corr::ConfidenceMask mask = corr::flying_pixel_mask(
        scene.depths[all.query_frame], corr::kFlyingPixelRelThreshold);
    for (int n = 0; n < all.num_tracks; ++n) {
      if (!all.is_visible(n, all.query_frame)) continue;
      const Eigen::Vector2d uv = all.at(n, all.query_frame);
      const int col = static_cast<int>(std::floor(uv.x()));
      const int row = static_cast<int>(std::floor(uv.y()));
      if (row >= 0 && row < mask.height && col >= 0 && col < mask.width &&
          mask.at(row, col) > 0.5) {
        origin.push_back(n);
      }
    }
  }
  REQUIRE(static_cast<int>(origin.size()) == kept.num_tracks);

  const std::vector<eval::Trajectory3D> recovered = eval::recover_scene_flow(seq, kept);
  REQUIRE(recovered.size() == static_cast<std::size_t>(kept.num_tracks));

  // The query-frame filter cannot see tracks that drift onto a depth edge in
  // a later frame, where bilinear lifting blends two surfaces. Those rare
  // samples are inherent to the protocol; the analytic comparison conditions
  // on tracks that stay interior in every visible frame.
  std::vector<corr::ConfidenceMask> edge_masks;
  for (const auto& depth : scene.depths) {
    edge_masks.push_back(corr::flying_pixel_mask(depth, corr::kFlyingPixelRelThreshold));
  }
  double worst_interior = 0.0;
  std::size_t interior_tracks = 0, interior_samples = 0, contaminated_samples = 0,
              total_samples = 0;
  for (std::size_t n = 0; n < recovered.size(); ++n) {
    bool interior = true;
    for (int t = 0; t < kept.num_frames; ++t) {
      if (!recovered[n].visible[t]) continue;
      const Eigen::Vector2d uv = kept.at(static_cast<int>(n), t);
      const int col = static_cast<int>(std::floor(uv.x()));
      const int row = static_cast<int>(std::floor(uv.y()));
      const auto& mask = edge_masks[t];
      if (row < 0 || row >= mask.height || col < 0 || col >= mask.width ||
          mask.at(row, col) <= 0.5) {
        interior = false;
      }
    }
    double worst_of_track = 0.0;
    std::size_t samples_of_track = 0;
    for (int t = 0; t < kept.num_frames; ++t) {
      if (!recovered[n].visible[t]) continue;
      const Eigen::Vector3d& analytic = scene.tracks.world_points[origin[n]][t];
      const double err = (recovered[n].positions[t] - analytic).norm();
      worst_of_track = std::max(worst_of_track, err);
      ++samples_of_track;
      contaminated_samples += (err >= 2e-3) ? 1 : 0;
    }
    total_samples += samples_of_track;
    if (interior) {
      ++interior_tracks;
      interior_samples += samples_of_track;
      worst_interior = std::max(worst_interior, worst_of_track);
    }
  }
  REQUIRE(total_samples > 500);
  CHECK(interior_tracks > recovered.size() * 9 / 10);
  CHECK(interior_samples > 500);
  CHECK(worst_interior < 2e-3);
  // Edge drift stays a rare exception rather than a systematic error.
  CHECK(contaminated_samples * 50 < total_samples);
}

TEST_CASE("a single-frame track lands exactly on its pixel's point") {
  const synth::OracleScene scene = synth::Scene(synth::preset_scene("static", 6, 1)).render_all(4);
  core::CloudSequence seq = oracle_sequence(scene);

  corr::TrackSet track;
  track.num_tracks = 1;
  track.num_frames = 1;
  track.query_frame = 0;
  track.positions = {Eigen::Vector2d(10.5, 20.5)};  // center of pixel (20, 10)
  track.visible = {1};
  const auto recovered = eval::recover_scene_flow(seq, track);
  REQUIRE(recovered.size() == 1);
  REQUIRE(recovered[0].visible[0] == 1);
  CHECK((recovered[0].positions[0] - seq.frames[0].at(20, 10)).norm() == 0.0);
}

TEST_CASE("flying-pixel filtering drops exactly the edge-seeded tracks") {
  // Flat depth everywhere: nothing is dropped.
  core::DepthMap flat(8, 10);
  for (std::size_t k = 0; k < flat.size(); ++k) {
    flat.values[k] = 2.0;
    flat.valid[k] = 1;
  }
  corr::TrackSet tracks;
  tracks.num_tracks = 3;
  tracks.num_frames = 1;
  tracks.query_frame = 0;
  tracks.positions = {Eigen::Vector2d(1.5, 1.5), Eigen::Vector2d(4.5, 3.5),
                      Eigen::Vector2d(8.5, 6.5)};
  tracks.visible = {1, 1, 1};
  CHECK(eval::filter_flying_tracks(tracks, {flat}).num_tracks == 3);

  // A depth step between columns 4 and 5 marks both flanks as flying.
  core::DepthMap step = flat;
  for (int r = 0; r < 8; ++r) {
    for (int c = 5; c < 10; ++c) step.values[step.index(r, c)] = 4.0;
  }
  const corr::TrackSet kept = eval::filter_flying_tracks(tracks, {step});
  REQUIRE(kept.num_tracks == 2);
  CHECK(kept.at(0, 0).x() == 1.5);
  CHECK(kept.at(1, 0).x() == 8.5);

  // Invisible at the query frame means there is nothing to anchor the track.
  tracks.visible = {1, 0, 1};
  CHECK(eval::filter_flying_tracks(tracks, {flat}).num_tracks == 2);
}

TEST_CASE("flow metrics: exact values and a direct-formula oracle") {
  std::mt19937_64 rng(42);
  const std::size_t n_traj = 40, frames = 9;
  std::vector<eval::Trajectory3D> gt(n_traj, eval::Trajectory3D(frames));
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::bernoulli_distribution vis(0.8);
  for (auto& traj : gt) {
    for (std::size_t t = 0; t < frames; ++t) {
      traj.positions[t] = Eigen::Vector3d(u(rng), u(rng), u(rng));
      traj.visible[t] = vis(rng) ? 1 : 0;
    }
  }

  // Identical sets score perfectly.
  const eval::MetricReport perfect = eval::flow_metrics(gt, gt);
  CHECK(perfect.ade_mm == 0.0);
  CHECK(perfect.fde_mm == 0.0);
  CHECK(perfect.p5 == 100.0);
  CHECK(perfect.p10 == 100.0);

  // A constant 3 mm offset shows up as exactly 3 mm everywhere.
  std::vector<eval::Trajectory3D> shifted = gt;
  for (auto& traj : shifted) {
    for (auto& p : traj.positions) p.x() += 0.003;
  }
  const eval::MetricReport offset = eval::flow_metrics(shifted, gt);
  CHECK(offset.ade_mm == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(offset.fde_mm == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(offset.p5 == 100.0);
  CHECK(offset.p10 == 100.0);

  // Random perturbations, some large enough to cross the 5 and 10 cm bars;
  // scored against a straightforward reimplementation of the definitions.
  std::vector<eval::Trajectory3D> pred = gt;
  std::uniform_real_distribution<double> noise(0.0, 0.15);
  for (auto& traj : pred) {
    const double radius = noise(rng);
    for (auto& p : traj.positions) p += radius * Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized();
    for (std::size_t t = 0; t < frames; ++t) {
      if (vis(rng)) continue;
      traj.visible[t] = 0;  // prediction loses some timesteps of its own
    }
  }
  const eval::MetricReport report = eval::flow_metrics(pred, gt);

  double ade = 0.0, fde = 0.0;
  double hit5 = 0.0, hit10 = 0.0, used = 0.0;
  for (std::size_t n = 0; n < n_traj; ++n) {
    double err = 0.0, last = 0.0, steps = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      if (!pred[n].visible[t] || !gt[n].visible[t]) continue;
      last = (pred[n].positions[t] - gt[n].positions[t]).norm();
      err += last;
      steps += 1.0;
    }
    if (steps == 0.0) continue;
    const double mean = err / steps;
    ade += mean;
    fde += last;
    hit5 += (mean < 0.05) ? 1.0 : 0.0;
    hit10 += (mean < 0.10) ? 1.0 : 0.0;
    used += 1.0;
  }
  REQUIRE(used > 0.0);
  CHECK(report.ade_mm == doctest::Approx(ade / used * 1000.0).epsilon(1e-12));
  CHECK(report.fde_mm == doctest::Approx(fde / used * 1000.0).epsilon(1e-12));
  CHECK(report.p5 == doctest::Approx(100.0 * hit5 / used).epsilon(1e-12));
  CHECK(report.p10 == doctest::Approx(100.0 * hit10 / used).epsilon(1e-12));
  CHECK(report.p5 < 100.0);   // the noise actually crossed the thresholds
  CHECK(report.p10 > report.p5 - 1e-12);

  // Error paths: mismatched sets, empty sets, no common visibility.
  std::vector<eval::Trajectory3D> shorter(gt.begin(), gt.end() - 1);
  CHECK_THROWS_AS(eval::flow_metrics(pred, shorter), InputShapeError);
  CHECK_THROWS_AS(eval::flow_metrics({}, {}), InputShapeError);
  std::vector<eval::Trajectory3D> blind = gt;
  for (auto& traj : blind) std::fill(traj.visible.begin(), traj.visible.end(), std::uint8_t(0));
  CHECK_THROWS_AS(eval::flow_metrics(blind, gt), DegeneracyError);
}

TEST_CASE("metric reports print fixed-order tables and JSON") {
  eval::MetricReport report;
  report.cd_mm = 12.345678;
  report.f1 = 10.0;
  report.f2_5 = 50.0;
  report.f5 = 90.0;
  report.ade_mm = 4.25;
  report.fde_mm = 6.5;
  report.p5 = 75.0;
  report.p10 = 100.0;

  const std::string table = eval::metric_report_table(report, true, false);
  CHECK(table.find("CD(mm)") != std::string::npos);
  CHECK(table.find("F2.5(%)") != std::string::npos);
  CHECK(table.find("12.346") != std::string::npos);
  CHECK(table.find("ADE") == std::string::npos);

  const std::string json = eval::metric_report_json(report, true, true);
  CHECK(json.find("\"cd_mm\"") < json.find("\"f1\""));
  CHECK(json.find("\"f5\"") < json.find("\"ade_mm\""));
  CHECK(json.find("\"p10\": 100.0") != std::string::npos);

  const std::string flow_only = eval::metric_report_json(report, false, true);
  CHECK(flow_only.find("cd_mm") == std::string::npos);
  CHECK(flow_only.find("\"ade_mm\": 4.25") != std::string::npos);
}
