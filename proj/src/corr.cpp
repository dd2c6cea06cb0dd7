#include "mono4d/corr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mono4d/parallel.hpp"

namespace mono4d::corr {

void FlowField::validate() const {
  if (height <= 0 || width <= 0 || du.size() != std::size_t(height) * width ||
      dv.size() != du.size() || valid.size() != du.size()) {
    std::ostringstream msg;
    msg << "flow field rasters disagree with size " << height << "x" << width;
    throw InputShapeError(msg.str());
  }
  for (std::size_t i = 0; i < du.size(); ++i) {
    if (valid[i] && (!std::isfinite(du[i]) || !std::isfinite(dv[i]))) {
      std::ostringstream msg;
      msg << "flow field has non-finite displacement at valid pixel " << i;
      throw NumericError(msg.str());
    }
  }
}

void ConfidenceMask::validate() const {
  if (height <= 0 || width <= 0 || values.size() != std::size_t(height) * width) {
    std::ostringstream msg;
    msg << "confidence mask raster disagrees with size " << height << "x" << width;
    throw InputShapeError(msg.str());
  }
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      std::ostringstream msg;
      msg << "confidence value " << v << " is outside [0, 1]";
      throw NumericError(msg.str());
    }
  }
}

double ConfidenceMask::mass() const {
  KahanSum s;
  for (double v : values) s.add(v);
  return s.value();
}

void TrackSet::validate() const {
  if (num_tracks < 0 || num_frames <= 0) {
    std::ostringstream msg;
    msg << "track set sizes are invalid: " << num_tracks << " tracks, " << num_frames << " frames";
    throw InputShapeError(msg.str());
  }
  std::size_t n = std::size_t(num_tracks) * num_frames;
  if (positions.size() != n || visible.size() != n) {
    std::ostringstream msg;
    msg << "track set rasters disagree: expected " << n << " entries, got " << positions.size()
        << " positions and " << visible.size() << " visibility flags";
    throw InputShapeError(msg.str());
  }
  if (query_frame != 0) {
    std::ostringstream msg;
    msg << "track sets are seeded at frame 0, got query_frame=" << query_frame;
    throw InputShapeError(msg.str());
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (visible[i] && !positions[i].allFinite()) {
      std::ostringstream msg;
      msg << "track position " << i << " is non-finite while marked visible";
      throw NumericError(msg.str());
    }
  }
}

BilinearFootprint bilinear_footprint(double u, double v, int height, int width) {
  BilinearFootprint f;
  double gx = u - 0.5;
  double gy = v - 0.5;
  if (!(gx >= 0.0) || !(gy >= 0.0) || !(gx <= width - 1) || !(gy <= height - 1)) return f;
  int c0 = std::min(int(std::floor(gx)), std::max(width - 2, 0));
  int r0 = std::min(int(std::floor(gy)), std::max(height - 2, 0));
  double fx = gx - c0;
  double fy = gy - r0;
  f.in_bounds = true;
  f.r0 = r0;
  f.c0 = c0;
  f.w[0] = (1.0 - fy) * (1.0 - fx);
  f.w[1] = (1.0 - fy) * fx;
  f.w[2] = fy * (1.0 - fx);
  f.w[3] = fy * fx;
  return f;
}

namespace {

// Corner linear indices for a footprint; width-1 rasters collapse columns.
inline void corner_indices(const BilinearFootprint& f, int height, int width, std::size_t idx[4]) {
  int r1 = std::min(f.r0 + 1, height - 1);
  int c1 = std::min(f.c0 + 1, width - 1);
  idx[0] = std::size_t(f.r0) * width + f.c0;
  idx[1] = std::size_t(f.r0) * width + c1;
  idx[2] = std::size_t(r1) * width + f.c0;
  idx[3] = std::size_t(r1) * width + c1;
}

}  // namespace

bool sample_point(const FrameCloud& cloud, double u, double v, Eigen::Vector3d* out) {
  BilinearFootprint f = bilinear_footprint(u, v, cloud.height, cloud.width);
  if (!f.in_bounds) return false;
  std::size_t idx[4];
  corner_indices(f, cloud.height, cloud.width, idx);
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (int k = 0; k < 4; ++k) {
    if (f.w[k] == 0.0) continue;
    if (!cloud.valid[idx[k]]) return false;
    acc += f.w[k] * cloud.points[idx[k]];
  }
  *out = acc;
  return true;
}

double sample_mask(const ConfidenceMask& mask, double u, double v) {
  BilinearFootprint f = bilinear_footprint(u, v, mask.height, mask.width);
  if (!f.in_bounds) return 0.0;
  std::size_t idx[4];
  corner_indices(f, mask.height, mask.width, idx);
  double acc = 0.0;
  for (int k = 0; k < 4; ++k)
    if (f.w[k] != 0.0) acc += f.w[k] * mask.values[idx[k]];
  return acc;
}

double sample_mask_min(const ConfidenceMask& mask, double u, double v) {
  BilinearFootprint f = bilinear_footprint(u, v, mask.height, mask.width);
  if (!f.in_bounds) return 0.0;
  std::size_t idx[4];
  corner_indices(f, mask.height, mask.width, idx);
  double m = 1.0;
  for (int k = 0; k < 4; ++k)
    if (f.w[k] != 0.0) m = std::min(m, mask.values[idx[k]]);
  return m;
}

FrameCloud warp_cloud(const FrameCloud& target, const FlowField& flow) {
  flow.validate();
  FrameCloud out(flow.height, flow.width);
  for (int r = 0; r < flow.height; ++r) {
    for (int c = 0; c < flow.width; ++c) {
      std::size_t i = flow.index(r, c);
      if (!flow.valid[i]) continue;
      double u = c + 0.5 + flow.du[i];
      double v = r + 0.5 + flow.dv[i];
      Eigen::Vector3d p;
      if (sample_point(target, u, v, &p)) {
        out.points[i] = p;
        out.valid[i] = 1;
      }
    }
  }
  return out;
}

void sample_cloud(const FrameCloud& cloud, const std::vector<Eigen::Vector2d>& positions,
                  std::vector<Eigen::Vector3d>* points, std::vector<std::uint8_t>* valid) {
  points->assign(positions.size(), Eigen::Vector3d::Zero());
  valid->assign(positions.size(), 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    Eigen::Vector3d p;
    if (sample_point(cloud, positions[i].x(), positions[i].y(), &p)) {
      (*points)[i] = p;
      (*valid)[i] = 1;
    }
  }
}

ConfidenceMask flying_pixel_mask(const DepthMap& depth, double rel_threshold) {
  if (!(rel_threshold > 0.0) || !std::isfinite(rel_threshold)) {
    std::ostringstream msg;
    msg << "flying-pixel threshold must be finite and positive, got " << rel_threshold;
    throw InputShapeError(msg.str());
  }
  ConfidenceMask mask(depth.height, depth.width, 0.0);
  for (int r = 0; r < depth.height; ++r) {
    for (int c = 0; c < depth.width; ++c) {
      std::size_t i = depth.index(r, c);
      if (!depth.valid[i]) continue;
      double d = depth.values[i];
      bool flying = false;
      for (int dr = -1; dr <= 1 && !flying; ++dr) {
        for (int dc = -1; dc <= 1 && !flying; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int rn = r + dr, cn = c + dc;
          if (rn < 0 || rn >= depth.height || cn < 0 || cn >= depth.width) continue;
          std::size_t j = depth.index(rn, cn);
          if (!depth.valid[j]) continue;
          if (std::abs(depth.values[j] - d) / d > rel_threshold) flying = true;
        }
      }
      if (!flying) mask.values[i] = 1.0;
    }
  }
  return mask;
}

namespace {

void check_same_size(const ConfidenceMask& a, const ConfidenceMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    std::ostringstream msg;
    msg << what << ": mask sizes disagree, " << a.height << "x" << a.width << " vs " << b.height
        << "x" << b.width;
    throw InputShapeError(msg.str());
  }
}

}  // namespace

ConfidenceMask compose_pseudo_mask(const ConfidenceMask& dynamic, const ConfidenceMask& edges) {
  check_same_size(dynamic, edges, "compose_pseudo_mask");
  ConfidenceMask out(dynamic.height, dynamic.width);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = (1.0 - dynamic.values[i]) * edges.values[i];
  return out;
}

ConfidenceMask compose_pseudo_mask(const ConfidenceMask& dynamic, const ConfidenceMask& edges,
                                   const std::vector<std::uint8_t>& flow_valid) {
  ConfidenceMask out = compose_pseudo_mask(dynamic, edges);
  if (flow_valid.size() != out.values.size()) {
    std::ostringstream msg;
    msg << "compose_pseudo_mask: flow validity raster has " << flow_valid.size()
        << " entries, masks have " << out.values.size();
    throw InputShapeError(msg.str());
  }
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (!flow_valid[i]) out.values[i] = 0.0;
  return out;
}

double PairedPoints::mass() const {
  KahanSum s;
  for (double x : w) s.add(x);
  return s.value();
}

PairedPoints pair_by_flow(const FrameCloud& cloud_i, const FrameCloud& cloud_j,
                          const FlowField& flow_ij, const ConfidenceMask& mask_i,
                          const ConfidenceMask& mask_j) {
  if (cloud_i.height != flow_ij.height || cloud_i.width != flow_ij.width ||
      mask_i.height != flow_ij.height || mask_i.width != flow_ij.width) {
    std::ostringstream msg;
    msg << "pair_by_flow: source rasters disagree with flow " << flow_ij.height << "x"
        << flow_ij.width;
    throw InputShapeError(msg.str());
  }
  PairedPoints out;
  out.a.reserve(flow_ij.size());
  out.b.reserve(flow_ij.size());
  out.w.reserve(flow_ij.size());
  for (int r = 0; r < flow_ij.height; ++r) {
    for (int c = 0; c < flow_ij.width; ++c) {
      std::size_t i = flow_ij.index(r, c);
      if (!flow_ij.valid[i] || !cloud_i.valid[i]) continue;
      double wi = mask_i.values[i];
      if (wi <= 0.0) continue;
      double u = c + 0.5 + flow_ij.du[i];
      double v = r + 0.5 + flow_ij.dv[i];
      Eigen::Vector3d b;
      if (!sample_point(cloud_j, u, v, &b)) continue;
      double wj = sample_mask_min(mask_j, u, v);
      double w = wi * wj;
      if (w <= 0.0) continue;
      out.a.push_back(cloud_i.points[i]);
      out.b.push_back(b);
      out.w.push_back(w);
    }
  }
  return out;
}

PairedPoints pair_by_tracks(const FrameCloud& cloud_i, const FrameCloud& cloud_j,
                            const TrackSet& tracks, int frame_i, int frame_j,
                            const ConfidenceMask& mask_i, const ConfidenceMask& mask_j) {
  if (frame_i < 0 || frame_i >= tracks.num_frames || frame_j < 0 || frame_j >= tracks.num_frames) {
    std::ostringstream msg;
    msg << "pair_by_tracks: frames (" << frame_i << ", " << frame_j << ") outside track range 0.."
        << tracks.num_frames - 1;
    throw InputShapeError(msg.str());
  }
  PairedPoints out;
  for (int n = 0; n < tracks.num_tracks; ++n) {
    if (!tracks.is_visible(n, frame_i) || !tracks.is_visible(n, frame_j)) continue;
    const Eigen::Vector2d& pi = tracks.at(n, frame_i);
    const Eigen::Vector2d& pj = tracks.at(n, frame_j);
    Eigen::Vector3d a, b;
    if (!sample_point(cloud_i, pi.x(), pi.y(), &a)) continue;
    if (!sample_point(cloud_j, pj.x(), pj.y(), &b)) continue;
    double w = sample_mask_min(mask_i, pi.x(), pi.y()) * sample_mask_min(mask_j, pj.x(), pj.y());
    if (w <= 0.0) continue;
    out.a.push_back(a);
    out.b.push_back(b);
    out.w.push_back(w);
  }
  return out;
}

}  // namespace mono4d::corr
