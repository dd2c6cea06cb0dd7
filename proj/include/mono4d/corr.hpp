#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mono4d/core.hpp"

namespace mono4d::corr {

using core::CameraIntrinsics;
using core::DepthMap;
using core::FrameCloud;

/// Dense 2D displacements mapping pixels of the frame the field lives on to
/// image positions in another frame: position' = (c + 0.5 + du, r + 0.5 + dv).
/// Invalid pixels (occluded or out of view in the target) carry valid = 0.
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<double> du;
  std::vector<double> dv;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int h, int w)
      : height(h), width(w), du(size_t(h) * w, 0.0), dv(size_t(h) * w, 0.0), valid(size_t(h) * w, 0) {}

  std::size_t size() const { return du.size(); }
  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  void validate() const;
};

/// Per-pixel confidence in [0, 1].
struct ConfidenceMask {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ConfidenceMask() = default;
  ConfidenceMask(int h, int w, double fill = 0.0)
      : height(h), width(w), values(size_t(h) * w, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  double at(int r, int c) const { return values[index(r, c)]; }
  void validate() const;

  /// Sum of all values.
  double mass() const;
};

/// Sparse point trajectories seeded in one query frame (always frame 0 here):
/// per track n and frame t an image position and a visibility flag.
struct TrackSet {
  int num_tracks = 0;
  int num_frames = 0;
  int query_frame = 0;
  std::vector<Eigen::Vector2d> positions;  // num_tracks * num_frames, track-major
  std::vector<std::uint8_t> visible;

  std::size_t index(int track, int frame) const {
    return std::size_t(track) * num_frames + frame;
  }
  const Eigen::Vector2d& at(int track, int frame) const { return positions[index(track, frame)]; }
  bool is_visible(int track, int frame) const { return visible[index(track, frame)] != 0; }
  void validate() const;
};

/// Bilinear interpolation footprint at a continuous image position. Corner
/// weights are exact; corners whose weight is exactly zero take no part in
/// validity decisions, so sampling at a pixel center reproduces that pixel.
struct BilinearFootprint {
  bool in_bounds = false;
  int r0 = 0, c0 = 0;       // top-left corner; the other corners are +1
  double w[4] = {0, 0, 0, 0};  // (r0,c0), (r0,c1), (r1,c0), (r1,c1)
};

BilinearFootprint bilinear_footprint(double u, double v, int height, int width);

/// Bilinear sample of a cloud at (u, v). Invalid when out of bounds or when
/// any corner with nonzero weight is invalid.
bool sample_point(const FrameCloud& cloud, double u, double v, Eigen::Vector3d* out);

/// Bilinear sample of a confidence mask; 0 outside the image.
double sample_mask(const ConfidenceMask& mask, double u, double v);

/// Conservative mask sample: the minimum over corners with nonzero weight.
/// Any corner touching a low-confidence pixel caps the whole footprint, which
/// keeps cross-surface interpolation out of weighted sums. 0 outside the image.
double sample_mask_min(const ConfidenceMask& mask, double u, double v);

/// Resamples `target` at the positions this flow points to. The output lives
/// on the flow's grid: out(r, c) = target(center(r, c) + flow(r, c)).
/// Invalid where the flow is invalid, the position leaves the image, or any
/// contributing bilinear corner of `target` is invalid.
FrameCloud warp_cloud(const FrameCloud& target, const FlowField& flow);

/// Bilinear samples of a cloud at arbitrary positions. Returns one point and
/// one validity flag per input position, using the same rules as warp_cloud.
void sample_cloud(const FrameCloud& cloud, const std::vector<Eigen::Vector2d>& positions,
                  std::vector<Eigen::Vector3d>* points, std::vector<std::uint8_t>* valid);

/// Depth-edge confidence: 1 where the maximum relative depth difference to
/// any valid 8-neighbor, |d_n - d| / d, stays within rel_threshold; 0 on
/// pixels exceeding it and on invalid pixels. Ratios make the mask invariant
/// to a global depth scale. Both pixels flanking a step edge are zeroed.
ConfidenceMask flying_pixel_mask(const DepthMap& depth, double rel_threshold);

/// Default relative threshold for flying-pixel detection.
inline constexpr double kFlyingPixelRelThreshold = 0.05;

/// Pointwise product (1 - dynamic) * edges, optionally times flow validity.
/// Non-decreasing in each factor; values stay in [0, 1].
ConfidenceMask compose_pseudo_mask(const ConfidenceMask& dynamic, const ConfidenceMask& edges);
ConfidenceMask compose_pseudo_mask(const ConfidenceMask& dynamic, const ConfidenceMask& edges,
                                   const std::vector<std::uint8_t>& flow_valid);

/// Matched 3D point pairs with per-pair weights, the common currency of the
/// losses and the pose solver: a[k] lives in one frame's camera coordinates,
/// b[k] in the other's. Pairs with zero weight are dropped at construction.
struct PairedPoints {
  std::vector<Eigen::Vector3d> a;
  std::vector<Eigen::Vector3d> b;
  std::vector<double> w;

  std::size_t size() const { return a.size(); }
  double mass() const;
};

/// Dense pairing along a flow field: a = cloud_i at each pixel center,
/// b = cloud_j sampled at center + flow. Weight = mask_i at the pixel times
/// the conservative footprint sample of mask_j at the displaced position.
PairedPoints pair_by_flow(const FrameCloud& cloud_i, const FrameCloud& cloud_j,
                          const FlowField& flow_ij, const ConfidenceMask& mask_i,
                          const ConfidenceMask& mask_j);

/// Sparse pairing along tracks: a = cloud_i sampled at the track position in
/// frame i, b = cloud_j at its position in frame j. Only tracks visible in
/// both frames contribute; weights are conservative footprint samples of both
/// frames' masks at the respective positions.
PairedPoints pair_by_tracks(const FrameCloud& cloud_i, const FrameCloud& cloud_j,
                            const TrackSet& tracks, int frame_i, int frame_j,
                            const ConfidenceMask& mask_i, const ConfidenceMask& mask_j);

}  // namespace mono4d::corr
