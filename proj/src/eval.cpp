#include "mono4d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mono4d/errors.hpp"
#include "mono4d/parallel.hpp"

namespace mono4d::eval {

namespace {

constexpr double kMetersToMm = 1000.0;

/// Distance from every query point to its nearest index point, one slot per
/// query so the parallel fill stays deterministic.
std::vector<double> nearest_distances(const NearestNeighborGrid& index,
                                      const std::vector<Eigen::Vector3d>& queries) {
  std::vector<double> out(queries.size(), 0.0);
  parallel_for(queries.size(), [&](std::size_t i) { out[i] = index.nearest_distance(queries[i]); });
  return out;
}

double kahan_mean(const std::vector<double>& values) {
  KahanSum sum;
  for (double v : values) sum.add(v);
  return sum.value() / static_cast<double>(values.size());
}

double fscore_from_distances(const std::vector<double>& pred_to_gt,
                             const std::vector<double>& gt_to_pred, double delta_m) {
  const auto within = [delta_m](const std::vector<double>& d) {
    std::size_t n = 0;
    for (double v : d) n += (v <= delta_m) ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(d.size());
  };
  const double precision = within(pred_to_gt);
  const double recall = within(gt_to_pred);
  if (precision + recall == 0.0) return 0.0;
  return 200.0 * precision * recall / (precision + recall);
}

void require_nonempty(const std::vector<Eigen::Vector3d>& pred,
                      const std::vector<Eigen::Vector3d>& gt, const char* metric) {
  if (pred.empty() || gt.empty()) {
    std::ostringstream msg;
    msg << metric << " needs two non-empty point clouds, got " << pred.size() << " and "
        << gt.size() << " points";
    throw InputShapeError(msg.str());
  }
}

}  // namespace

std::string metric_report_json(const MetricReport& report, bool pointcloud, bool flow) {
  nlohmann::ordered_json j;
  if (pointcloud) {
    j["cd_mm"] = report.cd_mm;
    j["f1"] = report.f1;
    j["f2_5"] = report.f2_5;
    j["f5"] = report.f5;
  }
  if (flow) {
    j["ade_mm"] = report.ade_mm;
    j["fde_mm"] = report.fde_mm;
    j["p5"] = report.p5;
    j["p10"] = report.p10;
  }
  return j.dump(2) + "\n";
}

std::string metric_report_table(const MetricReport& report, bool pointcloud, bool flow) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  auto row = [&out](std::initializer_list<const char*> names, std::initializer_list<double> values) {
    for (const char* n : names) out << std::setw(11) << n;
    out << "\n";
    for (double v : values) out << std::setw(11) << v;
    out << "\n";
  };
  if (pointcloud) {
    row({"CD(mm)", "F1(%)", "F2.5(%)", "F5(%)"}, {report.cd_mm, report.f1, report.f2_5, report.f5});
  }
  if (flow) {
    row({"ADE(mm)", "FDE(mm)", "P5(%)", "P10(%)"},
        {report.ade_mm, report.fde_mm, report.p5, report.p10});
  }
  return out.str();
}

NearestNeighborGrid::NearestNeighborGrid(std::vector<Eigen::Vector3d> points)
    : points_(std::move(points)) {
  if (points_.empty()) {
    throw InputShapeError("nearest-neighbor index over an empty point set");
  }
  Eigen::Vector3d lo = points_[0];
  Eigen::Vector3d hi = points_[0];
  for (const auto& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  origin_ = lo;
  const Eigen::Vector3d extent = hi - lo;
  const double per_axis = std::ceil(std::cbrt(static_cast<double>(points_.size())));
  cell_ = extent.maxCoeff() / std::max(per_axis, 1.0);
  if (!(cell_ > 0.0)) cell_ = 1.0;  // all points coincide
  nx_ = static_cast<int>(std::floor(extent.x() / cell_)) + 1;
  ny_ = static_cast<int>(std::floor(extent.y() / cell_)) + 1;
  nz_ = static_cast<int>(std::floor(extent.z() / cell_)) + 1;

  // Counting sort into CSR layout, one contiguous slice per cell.
  const std::size_t cells = std::size_t(nx_) * ny_ * nz_;
  cell_start_.assign(cells + 1, 0);
  for (const auto& p : points_) cell_start_[cell_of(p) + 1]++;
  for (std::size_t c = 1; c <= cells; ++c) cell_start_[c] += cell_start_[c - 1];
  std::vector<Eigen::Vector3d> sorted(points_.size());
  std::vector<std::size_t> cursor(cell_start_.begin(), cell_start_.end() - 1);
  for (const auto& p : points_) sorted[cursor[cell_of(p)]++] = p;
  points_ = std::move(sorted);
}

std::size_t NearestNeighborGrid::cell_of(const Eigen::Vector3d& p) const {
  const auto coord = [this](double v, double o, int n) {
    const int c = static_cast<int>(std::floor((v - o) / cell_));
    return std::clamp(c, 0, n - 1);
  };
  const int x = coord(p.x(), origin_.x(), nx_);
  const int y = coord(p.y(), origin_.y(), ny_);
  const int z = coord(p.z(), origin_.z(), nz_);
  return (std::size_t(z) * ny_ + y) * nx_ + x;
}

double NearestNeighborGrid::nearest_distance(const Eigen::Vector3d& query) const {
  const auto coord = [this](double v, double o) {
    return static_cast<int>(std::floor((v - o) / cell_));
  };
  const int gx = coord(query.x(), origin_.x());
  const int gy = coord(query.y(), origin_.y());
  const int gz = coord(query.z(), origin_.z());

  double best2 = std::numeric_limits<double>::infinity();
  const auto visit = [&](int x, int y, int z) {
    if (x < 0 || x >= nx_ || y < 0 || y >= ny_ || z < 0 || z >= nz_) return;
    const std::size_t c = (std::size_t(z) * ny_ + y) * nx_ + x;
    for (std::size_t k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
      best2 = std::min(best2, (points_[k] - query).squaredNorm());
    }
  };

  // No cell beyond this ring exists in any direction.
  const int cover = std::max({std::abs(gx), std::abs(gx - (nx_ - 1)), std::abs(gy),
                              std::abs(gy - (ny_ - 1)), std::abs(gz), std::abs(gz - (nz_ - 1))});
  for (int r = 0;; ++r) {
    if (r > cover) break;
    if (r > 0) {
      // Any point in ring r lies at least (r - 1) whole cells away.
      const double reach = (r - 1) * cell_;
      if (best2 <= reach * reach) break;
    }
    if (r == 0) {
      visit(gx, gy, gz);
      continue;
    }
    for (int x : {gx - r, gx + r}) {
      for (int y = gy - r; y <= gy + r; ++y) {
        for (int z = gz - r; z <= gz + r; ++z) visit(x, y, z);
      }
    }
    for (int y : {gy - r, gy + r}) {
      for (int x = gx - r + 1; x <= gx + r - 1; ++x) {
        for (int z = gz - r; z <= gz + r; ++z) visit(x, y, z);
      }
    }
    for (int z : {gz - r, gz + r}) {
      for (int x = gx - r + 1; x <= gx + r - 1; ++x) {
        for (int y = gy - r + 1; y <= gy + r - 1; ++y) visit(x, y, z);
      }
    }
  }
  return std::sqrt(best2);
}

double chamfer_mm(const std::vector<Eigen::Vector3d>& pred,
                  const std::vector<Eigen::Vector3d>& gt) {
  require_nonempty(pred, gt, "Chamfer distance");
  const NearestNeighborGrid pred_index(pred);
  const NearestNeighborGrid gt_index(gt);
  const double gt_to_pred = kahan_mean(nearest_distances(pred_index, gt));
  const double pred_to_gt = kahan_mean(nearest_distances(gt_index, pred));
  return (gt_to_pred + pred_to_gt) * kMetersToMm;
}

double fscore(const std::vector<Eigen::Vector3d>& pred, const std::vector<Eigen::Vector3d>& gt,
              double delta_cm) {
  require_nonempty(pred, gt, "F-score");
  if (!(delta_cm > 0.0)) {
    std::ostringstream msg;
    msg << "F-score threshold must be positive, got " << delta_cm << " cm";
    throw InputShapeError(msg.str());
  }
  const NearestNeighborGrid pred_index(pred);
  const NearestNeighborGrid gt_index(gt);
  return fscore_from_distances(nearest_distances(gt_index, pred),
                               nearest_distances(pred_index, gt), delta_cm / 100.0);
}

align::SimTransform align_for_eval(const core::CloudSequence& pred, const core::CloudSequence& gt,
                                   AlignMode mode) {
  std::ostringstream msg;
  if (pred.frame_count() != gt.frame_count()) {
    msg << "predicted sequence has " << pred.frame_count() << " frames but ground truth has "
        << gt.frame_count();
    throw InputShapeError(msg.str());
  }
  if (pred.frame_count() == 0) throw InputShapeError("cannot align empty sequences");

  const std::size_t frames = (mode == AlignMode::kFirstFrame) ? 1 : pred.frame_count();
  align::CorrespondenceSet corr;
  for (std::size_t t = 0; t < frames; ++t) {
    const core::FrameCloud& p = pred.frames[t];
    const core::FrameCloud& g = gt.frames[t];
    if (p.height != g.height || p.width != g.width) {
      msg << "frame " << t << " resolution mismatch: predicted " << p.height << "x" << p.width
          << " vs ground truth " << g.height << "x" << g.width;
      throw InputShapeError(msg.str());
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p.valid[k] && g.valid[k]) corr.add(p.points[k], g.points[k], 1.0);
    }
  }
  return align::umeyama_similarity(corr, true);
}

MetricReport pointcloud_metrics(const core::CloudSequence& pred, const core::CloudSequence& gt,
                                AlignMode mode) {
  const align::SimTransform transform = align_for_eval(pred, gt, mode);

  MetricReport report;
  KahanSum cd, f1, f2_5, f5;
  for (std::size_t t = 0; t < pred.frame_count(); ++t) {
    std::vector<Eigen::Vector3d> pred_points;
    pred_points.reserve(pred.frames[t].size());
    for (std::size_t k = 0; k < pred.frames[t].size(); ++k) {
      if (pred.frames[t].valid[k]) pred_points.push_back(transform.apply(pred.frames[t].points[k]));
    }
    const std::vector<Eigen::Vector3d> gt_points = gt.frames[t].valid_points();
    if (pred_points.empty() || gt_points.empty()) {
      std::ostringstream msg;
      msg << "frame " << t << " has no valid points on "
          << (pred_points.empty() ? "the predicted" : "the ground-truth") << " side";
      throw InputShapeError(msg.str());
    }
    const NearestNeighborGrid pred_index(pred_points);
    const NearestNeighborGrid gt_index(gt_points);
    const std::vector<double> pred_to_gt = nearest_distances(gt_index, pred_points);
    const std::vector<double> gt_to_pred = nearest_distances(pred_index, gt_points);
    cd.add((kahan_mean(gt_to_pred) + kahan_mean(pred_to_gt)) * kMetersToMm);
    f1.add(fscore_from_distances(pred_to_gt, gt_to_pred, 0.01));
    f2_5.add(fscore_from_distances(pred_to_gt, gt_to_pred, 0.025));
    f5.add(fscore_from_distances(pred_to_gt, gt_to_pred, 0.05));
  }
  const double frames = static_cast<double>(pred.frame_count());
  report.cd_mm = cd.value() / frames;
  report.f1 = f1.value() / frames;
  report.f2_5 = f2_5.value() / frames;
  report.f5 = f5.value() / frames;
  return report;
}

std::vector<Trajectory3D> recover_scene_flow(const core::CloudSequence& seq,
                                             const corr::TrackSet& tracks) {
  tracks.validate();
  if (static_cast<std::size_t>(tracks.num_frames) > seq.frame_count()) {
    std::ostringstream msg;
    msg << "tracks span " << tracks.num_frames << " frames but the sequence has only "
        << seq.frame_count();
    throw InputShapeError(msg.str());
  }
  std::vector<Trajectory3D> out(tracks.num_tracks, Trajectory3D(tracks.num_frames));
  parallel_for(static_cast<std::size_t>(tracks.num_tracks), [&](std::size_t n) {
    for (int t = 0; t < tracks.num_frames; ++t) {
      if (!tracks.is_visible(static_cast<int>(n), t)) continue;
      const Eigen::Vector2d uv = tracks.at(static_cast<int>(n), t);
      Eigen::Vector3d p;
      if (corr::sample_point(seq.frames[t], uv.x(), uv.y(), &p)) {
        out[n].positions[t] = p;
        out[n].visible[t] = 1;
      }
    }
  });
  return out;
}

corr::TrackSet filter_flying_tracks(const corr::TrackSet& tracks,
                                    const std::vector<core::DepthMap>& reference_depths,
                                    double rel_threshold) {
  tracks.validate();
  if (static_cast<std::size_t>(tracks.query_frame) >= reference_depths.size()) {
    std::ostringstream msg;
    msg << "query frame " << tracks.query_frame << " has no reference depth (got "
        << reference_depths.size() << " maps)";
    throw InputShapeError(msg.str());
  }
  const corr::ConfidenceMask keep_mask =
      corr::flying_pixel_mask(reference_depths[tracks.query_frame], rel_threshold);

  corr::TrackSet out;
  out.num_frames = tracks.num_frames;
  out.query_frame = tracks.query_frame;
  for (int n = 0; n < tracks.num_tracks; ++n) {
    bool keep = tracks.is_visible(n, tracks.query_frame);
    if (keep) {
      const Eigen::Vector2d uv = tracks.at(n, tracks.query_frame);
      const int col = static_cast<int>(std::floor(uv.x()));
      const int row = static_cast<int>(std::floor(uv.y()));
      keep = row >= 0 && row < keep_mask.height && col >= 0 && col < keep_mask.width &&
             keep_mask.at(row, col) > 0.5;
    }
    if (!keep) continue;
    ++out.num_tracks;
    for (int t = 0; t < tracks.num_frames; ++t) {
      out.positions.push_back(tracks.at(n, t));
      out.visible.push_back(tracks.is_visible(n, t) ? 1 : 0);
    }
  }
  return out;
}

std::vector<Trajectory3D> apply_alignment(const align::SimTransform& transform,
                                          std::vector<Trajectory3D> trajectories) {
  for (auto& trajectory : trajectories) {
    for (std::size_t t = 0; t < trajectory.positions.size(); ++t) {
      if (trajectory.visible[t]) trajectory.positions[t] = transform.apply(trajectory.positions[t]);
    }
  }
  return trajectories;
}

MetricReport flow_metrics(const std::vector<Trajectory3D>& pred,
                          const std::vector<Trajectory3D>& gt) {
  std::ostringstream msg;
  if (pred.size() != gt.size()) {
    msg << "flow metrics need matched trajectory sets, got " << pred.size() << " and " << gt.size();
    throw InputShapeError(msg.str());
  }
  if (pred.empty()) throw InputShapeError("flow metrics over an empty trajectory set");

  KahanSum ade, fde;
  std::size_t used = 0, within5 = 0, within10 = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    if (pred[n].positions.size() != gt[n].positions.size()) {
      msg << "trajectory " << n << " spans " << pred[n].positions.size()
          << " frames in the prediction but " << gt[n].positions.size() << " in the reference";
      throw InputShapeError(msg.str());
    }
    KahanSum err;
    std::size_t steps = 0;
    double final_err = 0.0;
    for (std::size_t t = 0; t < pred[n].positions.size(); ++t) {
      if (!pred[n].visible[t] || !gt[n].visible[t]) continue;
      final_err = (pred[n].positions[t] - gt[n].positions[t]).norm();
      err.add(final_err);
      ++steps;
    }
    if (steps == 0) continue;  // no jointly visible timestep to score
    const double mean_err = err.value() / static_cast<double>(steps);
    ade.add(mean_err);
    fde.add(final_err);
    within5 += (mean_err < 0.05) ? 1 : 0;
    within10 += (mean_err < 0.10) ? 1 : 0;
    ++used;
  }
  if (used == 0) throw DegeneracyError("no trajectory pair shares a visible timestep");

  MetricReport report;
  const double n = static_cast<double>(used);
  report.ade_mm = ade.value() / n * kMetersToMm;
  report.fde_mm = fde.value() / n * kMetersToMm;
  report.p5 = 100.0 * static_cast<double>(within5) / n;
  report.p10 = 100.0 * static_cast<double>(within10) / n;
  return report;
}

}  // namespace mono4d::eval
