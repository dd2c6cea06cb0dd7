#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mono4d/align.hpp"
#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"

// Scoring of reconstructed 4D scenes against references: per-frame pointcloud
// distances (Chamfer, F-score) and long-term 3D scene-flow errors recovered
// from 2D tracks. Geometry stays in meters throughout; reported distances are
// millimeters and every such JSON key carries the unit in its name.

namespace mono4d::eval {

/// One 3D path across the clip, in a single shared coordinate frame.
/// positions[t] is meaningful only where visible[t] is set.
struct Trajectory3D {
  std::vector<Eigen::Vector3d> positions;
  std::vector<std::uint8_t> visible;

  Trajectory3D() = default;
  explicit Trajectory3D(std::size_t frames)
      : positions(frames, Eigen::Vector3d::Zero()), visible(frames, 0) {}
};

/// Metric bundle. The pointcloud suite (cd_mm, f1, f2_5, f5) holds per-frame
/// means; the flow suite (ade_mm, fde_mm, p5, p10) holds per-trajectory
/// means. F-scores and precisions are percentages in [0, 100].
struct MetricReport {
  double cd_mm = 0.0;
  double f1 = 0.0;
  double f2_5 = 0.0;
  double f5 = 0.0;
  double ade_mm = 0.0;
  double fde_mm = 0.0;
  double p5 = 0.0;
  double p10 = 0.0;
};

/// JSON object with fixed key order; either suite can be included.
std::string metric_report_json(const MetricReport& report, bool pointcloud, bool flow);

/// Two-line fixed-order table (CD, F1, F2.5, F5 then ADE, FDE, P5, P10).
std::string metric_report_table(const MetricReport& report, bool pointcloud, bool flow);

/// Exact nearest-neighbor queries over a fixed point set, backed by a uniform
/// cell grid searched in expanding rings: a ring is visited only while some
/// cell in it could still beat the best distance found, so results equal the
/// exhaustive scan. Construction over an empty set throws InputShapeError.
class NearestNeighborGrid {
 public:
  explicit NearestNeighborGrid(std::vector<Eigen::Vector3d> points);

  std::size_t size() const { return points_.size(); }
  double nearest_distance(const Eigen::Vector3d& query) const;

 private:
  std::size_t cell_of(const Eigen::Vector3d& p) const;

  std::vector<Eigen::Vector3d> points_;    // reordered so each cell is contiguous
  std::vector<std::size_t> cell_start_;    // CSR offsets, nx*ny*nz + 1 entries
  Eigen::Vector3d origin_ = Eigen::Vector3d::Zero();
  double cell_ = 1.0;
  int nx_ = 1, ny_ = 1, nz_ = 1;
};

/// Symmetric Chamfer distance in millimeters: the mean distance from each gt
/// point to its nearest pred point plus the mean from each pred point to its
/// nearest gt point. Both clouds must be non-empty.
double chamfer_mm(const std::vector<Eigen::Vector3d>& pred, const std::vector<Eigen::Vector3d>& gt);

/// F-score at threshold delta_cm (centimeters): harmonic mean of the share of
/// pred points within delta of gt and the share of gt points within delta of
/// pred, as a percentage. Thresholds of record are 1, 2.5, and 5 cm.
double fscore(const std::vector<Eigen::Vector3d>& pred, const std::vector<Eigen::Vector3d>& gt,
              double delta_cm);

enum class AlignMode { kGlobal, kFirstFrame };

/// Least-squares scaled rigid transform mapping pred into gt's frame, fitted
/// over pixelwise-corresponding jointly-valid points: every frame in global
/// mode, frame 0 only in first-frame mode. Sequences must match in frame
/// count and per-frame resolution.
align::SimTransform align_for_eval(const core::CloudSequence& pred, const core::CloudSequence& gt,
                                   AlignMode mode);

/// Full pointcloud suite: aligns pred to gt, then averages per-frame Chamfer
/// and F-scores over all frames. Flow fields of the report stay zero.
MetricReport pointcloud_metrics(const core::CloudSequence& pred, const core::CloudSequence& gt,
                                AlignMode mode);

/// Lifts 2D tracks to 3D by bilinearly sampling each frame's assembled cloud
/// at the tracked position. A timestep is visible in the output only if the
/// track was visible and the sample hit valid geometry.
std::vector<Trajectory3D> recover_scene_flow(const core::CloudSequence& seq,
                                             const corr::TrackSet& tracks);

/// Drops tracks whose query-frame position falls on a flying-pixel zero of
/// the reference depth (or is invisible or outside the image at the query
/// frame); the pixel is found by flooring the position.
corr::TrackSet filter_flying_tracks(const corr::TrackSet& tracks,
                                    const std::vector<core::DepthMap>& reference_depths,
                                    double rel_threshold = corr::kFlyingPixelRelThreshold);

/// Applies a scaled rigid transform to every visible position.
std::vector<Trajectory3D> apply_alignment(const align::SimTransform& transform,
                                          std::vector<Trajectory3D> trajectories);

/// Scene-flow suite over matched trajectory sets. Errors are measured on
/// timesteps where both sides are visible; a trajectory's score is its mean
/// per-timestep Euclidean error (ADE) and its final common timestep's error
/// (FDE), averaged over trajectories. P5/P10 are the percentages of
/// trajectories whose mean error stays below 5 cm / 10 cm. Trajectories with
/// no common visible timestep are skipped; if every pair is skipped the set
/// is degenerate. Pointcloud fields of the report stay zero.
MetricReport flow_metrics(const std::vector<Trajectory3D>& pred,
                          const std::vector<Trajectory3D>& gt);

}  // namespace mono4d::eval
