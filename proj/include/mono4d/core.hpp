#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mono4d/errors.hpp"

// Geometric conventions used throughout:
//  - image rasters are row-major, pixel (row r, col c) has index r*width + c;
//  - the continuous image position of a pixel is its center (u, v) = (c + 0.5, r + 0.5);
//  - camera frame: x right, y down, z forward; depth is the camera-frame z;
//  - poses map camera coordinates to world coordinates (camera-to-world);
//  - an assembled sequence is anchored so frame 0's pose is the identity.

namespace mono4d::core {

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  /// Ray through image position (u, v), normalized so z = 1.
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }

  /// Throws InputShapeError unless fx, fy > 0 and the image size is positive.
  void validate() const;
};

struct PoseSE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  // Number of composes since the rotation was last known orthonormal; compose
  // re-projects onto SO(3) once a chain exceeds 64 steps.
  int chain_depth = 0;

  static PoseSE3 identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }

  PoseSE3 inverse() const {
    PoseSE3 inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    inv.chain_depth = chain_depth;
    return inv;
  }

  /// Composition this ∘ other: (this ∘ other)(x) = this(other(x)).
  PoseSE3 compose(const PoseSE3& other) const;

  /// Nearest rotation in Frobenius norm (polar projection), det +1.
  void orthonormalize();

  /// Max deviation of RᵀR from identity plus det distance from +1.
  double orthonormality_error() const;

  /// Throws NumericError if the rotation is not orthonormal within tol.
  void validate(double tol = 1e-9) const;
};

/// Scaled rigid transform x ↦ scale * rotation * x + translation, scale > 0.
struct SimTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static SimTransform identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }

  SimTransform inverse() const;

  void validate(double tol = 1e-9) const;
};

/// Dense depth raster. Invalid pixels (non-finite or non-positive input
/// values) carry valid = 0 and take no part in any computation.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int h, int w) : height(h), width(w), values(size_t(h) * w, 0.0), valid(size_t(h) * w, 0) {}

  /// Marks non-finite and non-positive entries invalid, zeroing their values.
  static DepthMap from_values(int h, int w, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  double at(int r, int c) const { return values[index(r, c)]; }
  bool is_valid(int r, int c) const { return valid[index(r, c)] != 0; }
};

/// Per-pixel 3D points in the camera frame of one timestamp.
struct FrameCloud {
  int height = 0;
  int width = 0;
  std::vector<Eigen::Vector3d> points;
  std::vector<std::uint8_t> valid;

  FrameCloud() = default;
  FrameCloud(int h, int w)
      : height(h), width(w), points(size_t(h) * w, Eigen::Vector3d::Zero()), valid(size_t(h) * w, 0) {}

  std::size_t size() const { return points.size(); }
  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  const Eigen::Vector3d& at(int r, int c) const { return points[index(r, c)]; }
  bool is_valid(int r, int c) const { return valid[index(r, c)] != 0; }

  std::size_t valid_count() const;
  /// Valid points packed into a contiguous list.
  std::vector<Eigen::Vector3d> valid_points() const;
};

/// Frames expressed in a common coordinate system (frame 0's camera frame)
/// together with the per-frame camera-to-world poses that produced them.
struct CloudSequence {
  std::vector<FrameCloud> frames;
  std::vector<PoseSE3> poses;
  CameraIntrinsics intrinsics;

  std::size_t frame_count() const { return frames.size(); }
  void validate() const;
};

/// Back-projects a depth raster through the pinhole model: each valid pixel
/// (r, c) maps to depth * ray(c + 0.5, r + 0.5). Invalid pixels propagate.
FrameCloud unproject(const DepthMap& depth, const CameraIntrinsics& intrinsics);

/// Pinhole projection of a camera-frame point to an image position (u, v).
/// Throws NumericError for z <= 0.
Eigen::Vector2d project(const CameraIntrinsics& intrinsics, const Eigen::Vector3d& point);

/// Applies a pose to every valid point of a cloud.
FrameCloud transform(const FrameCloud& cloud, const PoseSE3& pose);

/// Expresses per-frame clouds in frame 0's camera frame: frame t maps through
/// poses[0]⁻¹ ∘ poses[t]. The returned poses are re-anchored the same way, so
/// the first is the identity.
CloudSequence assemble_global(const std::vector<FrameCloud>& clouds,
                              const std::vector<PoseSE3>& poses,
                              const CameraIntrinsics& intrinsics);

}  // namespace mono4d::core
