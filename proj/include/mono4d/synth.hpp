#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"

// Analytic test scenes: axis-aligned or rotated boxes (possibly flat panels
// with one zero extent) in front of an infinite wall, rendered by closed-form
// ray casting. Depths, flows, tracks, silhouettes, and poses are all exact;
// the only approximations anywhere downstream are the consumers' own.

namespace mono4d::synth {

using core::CameraIntrinsics;
using core::DepthMap;
using core::FrameCloud;
using core::PoseSE3;

/// Oriented box. Any half size may be zero, collapsing that axis to make a
/// flat panel (no side faces, no grazing surfaces).
struct Box {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_sizes = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// Box on a rigid trajectory: at frame t it is rotated by rotation_rate * t
/// about rotation_axis (through the base center) and shifted by velocity * t.
struct DynamicObject {
  Box base;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();       // m / frame
  Eigen::Vector3d rotation_axis = Eigen::Vector3d::UnitY();  // unit
  double rotation_rate = 0.0;                                // rad / frame

  /// Object-local to world pose at frame t (local frame = base box frame).
  PoseSE3 pose_at(int t) const;
};

enum class TrajectoryFamily { kHandheldJitter, kDolly, kOrbit };

struct SceneSpec {
  std::uint64_t seed = 1;
  int frames = 40;
  CameraIntrinsics intrinsics;

  TrajectoryFamily trajectory = TrajectoryFamily::kHandheldJitter;
  double translation_amplitude = 0.035;  // jitter, meters
  double rotation_amplitude = 0.004;     // jitter, radians
  double dolly_speed = 0.02;             // m / frame along +z
  double orbit_radius = 1.0;
  double orbit_span = 0.5;  // radians swept over the clip
  Eigen::Vector3d orbit_target = Eigen::Vector3d(0, 0, 2.6);

  bool has_wall = true;
  double wall_distance = 4.0;  // infinite plane z = wall_distance
  std::vector<Box> statics;
  std::optional<DynamicObject> dynamic;

  void validate() const;
};

/// Named presets: "static" (jittered handheld camera over panels and a wall),
/// "dynamic" (same plus a moving panel), "dolly", "orbit", and "clutter"
/// (adds a thick rotated box). Throws InputShapeError for unknown names.
SceneSpec preset_scene(const std::string& name, std::uint64_t seed = 1, int frames = 40);

struct FrameRender {
  DepthMap depth;
  FrameCloud cloud;                 // camera-frame points, identical to unproject(depth)
  corr::ConfidenceMask dynamic_mask;  // exact silhouette of the dynamic object, 1 = dynamic
};

struct TrackBundle {
  corr::TrackSet tracks;
  /// World-frame (= frame-0 camera frame) positions per track and frame,
  /// defined even while the track is invisible.
  std::vector<std::vector<Eigen::Vector3d>> world_points;
};

/// Everything the pipeline consumes for one scene, all analytic.
struct OracleScene {
  CameraIntrinsics intrinsics;
  std::vector<PoseSE3> poses;  // camera-to-world, pose[0] = identity
  std::vector<DepthMap> depths;
  std::vector<FrameCloud> clouds;
  std::vector<corr::ConfidenceMask> dynamic_masks;
  std::vector<corr::FlowField> flows;  // t -> t+1
  TrackBundle tracks;
};

class Scene {
 public:
  explicit Scene(const SceneSpec& spec);

  const SceneSpec& spec() const { return spec_; }
  const std::vector<PoseSE3>& poses() const { return poses_; }

  FrameRender render_frame(int t) const;
  corr::FlowField render_flow(int frame_i, int frame_j) const;
  TrackBundle render_tracks(int grid) const;
  OracleScene render_all(int track_grid = 35) const;

 private:
  struct RayHit {
    double depth = 0.0;
    int object = -1;  // -1 none, 0 wall, 1.. statics, kDynamicId dynamic
  };
  static constexpr int kDynamicId = 1000;

  RayHit cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir_z1, int frame) const;
  bool occluded(const Eigen::Vector3d& world_point, double camera_depth, int frame,
                const Eigen::Vector3d& camera_center) const;

  SceneSpec spec_;
  std::vector<PoseSE3> poses_;
};

/// Convenience wrappers over a one-shot Scene.
FrameRender render_frame(const SceneSpec& spec, int t);
corr::FlowField render_flow(const SceneSpec& spec, int frame_i, int frame_j);
TrackBundle render_tracks(const SceneSpec& spec, int grid);

}  // namespace mono4d::synth
