#include "mono4d/synth.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "mono4d/errors.hpp"

namespace mono4d::synth {
namespace {

constexpr double kRayMin = 1e-9;         // reject hits essentially at the origin
constexpr double kOcclusionRel = 1e-6;   // relative slack when re-casting a known surface point

/// Ray / oriented-box intersection. The ray is origin + s * dir with s > kRayMin
/// and dir not necessarily unit length; the returned s is in units of dir.
/// Zero half sizes collapse the box to a plane or segment: the slab for such an
/// axis degenerates to a single crossing parameter, which is exactly what makes
/// flat panels render without grazing side faces.
bool intersect_box(const Box& box, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                   double* s_out) {
  const Eigen::Vector3d o = box.rotation.transpose() * (origin - box.center);
  const Eigen::Vector3d d = box.rotation.transpose() * dir;
  double s_near = -std::numeric_limits<double>::infinity();
  double s_far = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double h = box.half_sizes[axis];
    if (std::abs(d[axis]) < 1e-15) {
      if (std::abs(o[axis]) > h) return false;
      continue;
    }
    double s0 = (-h - o[axis]) / d[axis];
    double s1 = (h - o[axis]) / d[axis];
    if (s0 > s1) std::swap(s0, s1);
    s_near = std::max(s_near, s0);
    s_far = std::min(s_far, s1);
  }
  if (s_near > s_far) return false;
  double s = s_near;
  if (s <= kRayMin) s = s_far;  // origin inside (or box behind): take the exit face
  if (s <= kRayMin) return false;
  *s_out = s;
  return true;
}

Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - center).normalized();
  const Eigen::Vector3d down(0.0, 1.0, 0.0);  // +y is down in camera coordinates
  Eigen::Vector3d x = down.cross(z);
  const double n = x.norm();
  if (n < 1e-12) {
    throw DegeneracyError(
        "look-at direction is parallel to the vertical axis; the camera roll is undefined");
  }
  x /= n;
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

/// Smooth pseudo-random handheld wobble: per axis, two sinusoids plus a linear
/// drift for both translation and rotation, with seeded frequencies, phases,
/// and amplitudes. Deterministic across platforms (mt19937_64 plus explicit
/// 53-bit uniforms; no distribution objects with unspecified algorithms).
struct JitterChannel {
  double amp[2];
  double freq[2];
  double phase[2];
  double drift;

  double eval(double u) const {  // u in [0, 1] across the clip
    double v = drift * u;
    for (int k = 0; k < 2; ++k) {
      v += amp[k] * std::sin(2.0 * std::numbers::pi * freq[k] * u + phase[k]);
    }
    return v;
  }
};

class SeededUniform {
 public:
  explicit SeededUniform(std::uint64_t seed) : engine_(seed) {}

  double next(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 engine_;
};

JitterChannel make_channel(SeededUniform& rng, double amplitude) {
  JitterChannel ch;
  for (int k = 0; k < 2; ++k) {
    ch.amp[k] = 0.5 * amplitude * rng.next(0.4, 1.0);
    ch.freq[k] = rng.next(0.6, 2.4);
    ch.phase[k] = rng.next(0.0, 2.0 * std::numbers::pi);
  }
  ch.drift = amplitude * rng.next(-0.5, 0.5);
  return ch;
}

std::vector<PoseSE3> build_trajectory(const SceneSpec& spec) {
  const int n = spec.frames;
  std::vector<PoseSE3> poses;
  poses.reserve(static_cast<std::size_t>(n));
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;

  switch (spec.trajectory) {
    case TrajectoryFamily::kDolly: {
      for (int t = 0; t < n; ++t) {
        PoseSE3 pose = PoseSE3::identity();
        pose.translation = Eigen::Vector3d(0.0, 0.0, spec.dolly_speed * t);
        poses.push_back(pose);
      }
      break;
    }
    case TrajectoryFamily::kOrbit: {
      for (int t = 0; t < n; ++t) {
        const double angle = spec.orbit_span * (t / denom - 0.5);
        const Eigen::Vector3d center =
            spec.orbit_target +
            spec.orbit_radius * Eigen::Vector3d(std::sin(angle), 0.0, -std::cos(angle));
        PoseSE3 pose;
        pose.rotation = look_at_rotation(center, spec.orbit_target);
        pose.translation = center;
        poses.push_back(pose);
      }
      break;
    }
    case TrajectoryFamily::kHandheldJitter: {
      SeededUniform rng(spec.seed);
      JitterChannel trans[3];
      JitterChannel rot[3];
      for (auto& ch : trans) ch = make_channel(rng, spec.translation_amplitude);
      for (auto& ch : rot) ch = make_channel(rng, spec.rotation_amplitude);
      for (int t = 0; t < n; ++t) {
        const double u = t / denom;
        Eigen::Vector3d axis_angle(rot[0].eval(u), rot[1].eval(u), rot[2].eval(u));
        PoseSE3 pose = PoseSE3::identity();
        const double angle = axis_angle.norm();
        if (angle > 0.0) {
          pose.rotation = Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
        }
        pose.translation =
            Eigen::Vector3d(trans[0].eval(u), trans[1].eval(u), trans[2].eval(u));
        poses.push_back(pose);
      }
      break;
    }
  }

  // Anchor the sequence so the world frame coincides with the first camera.
  const PoseSE3 anchor = poses.front().inverse();
  for (auto& pose : poses) pose = anchor.compose(pose);
  poses.front() = PoseSE3::identity();
  return poses;
}

std::vector<Box> default_panels() {
  // Flat panels (zero z extent) facing the camera, spread over the image with
  // pairwise depth gaps of at least 10% so every silhouette is a clean jump.
  std::vector<Box> panels;
  auto add = [&panels](double cx, double cy, double cz, double hx, double hy) {
    Box box;
    box.center = Eigen::Vector3d(cx, cy, cz);
    box.half_sizes = Eigen::Vector3d(hx, hy, 0.0);
    panels.push_back(box);
  };
  add(0.55, 0.30, 2.55, 0.30, 0.24);
  add(-0.62, 0.38, 2.82, 0.26, 0.20);
  add(-0.48, -0.42, 2.30, 0.22, 0.26);
  add(0.35, -0.30, 3.10, 0.34, 0.22);
  add(0.02, 0.05, 3.40, 0.20, 0.18);
  add(0.98, -0.55, 2.30, 0.20, 0.28);
  return panels;
}

CameraIntrinsics default_intrinsics() {
  CameraIntrinsics k;
  k.fx = 110.0;
  k.fy = 110.0;
  k.cx = 64.0;
  k.cy = 48.0;
  k.width = 128;
  k.height = 96;
  return k;
}

DynamicObject default_dynamic() {
  DynamicObject obj;
  obj.base.center = Eigen::Vector3d(-0.45, -0.05, 2.05);
  obj.base.half_sizes = Eigen::Vector3d(0.28, 0.22, 0.0);
  obj.velocity = Eigen::Vector3d(0.022, 0.009, -0.004);
  obj.rotation_axis = Eigen::Vector3d(0.2, 1.0, 0.3).normalized();
  obj.rotation_rate = 0.010;
  return obj;
}

}  // namespace

PoseSE3 DynamicObject::pose_at(int t) const {
  PoseSE3 pose;
  const double angle = rotation_rate * t;
  pose.rotation =
      Eigen::AngleAxisd(angle, rotation_axis.normalized()).toRotationMatrix() * base.rotation;
  pose.translation = base.center + velocity * t;
  return pose;
}

void SceneSpec::validate() const {
  intrinsics.validate();
  if (frames < 1) {
    std::ostringstream msg;
    msg << "scene must have at least 1 frame, got " << frames;
    throw InputShapeError(msg.str());
  }
  if (has_wall && wall_distance <= 0.0) {
    std::ostringstream msg;
    msg << "wall distance must be positive, got " << wall_distance;
    throw InputShapeError(msg.str());
  }
  auto check_box = [](const Box& box, const char* what) {
    if ((box.half_sizes.array() < 0.0).any()) {
      std::ostringstream msg;
      msg << what << " has a negative half size (" << box.half_sizes.transpose() << ")";
      throw InputShapeError(msg.str());
    }
  };
  for (const Box& box : statics) check_box(box, "static box");
  if (dynamic) {
    check_box(dynamic->base, "dynamic box");
    if (dynamic->rotation_axis.norm() < 1e-12) {
      throw InputShapeError("dynamic object rotation axis must be nonzero");
    }
  }
}

SceneSpec preset_scene(const std::string& name, std::uint64_t seed, int frames) {
  SceneSpec spec;
  spec.seed = seed;
  spec.frames = frames;
  spec.intrinsics = default_intrinsics();
  spec.statics = default_panels();

  if (name == "static") {
    return spec;
  }
  if (name == "dynamic") {
    spec.dynamic = default_dynamic();
    return spec;
  }
  if (name == "dolly") {
    spec.trajectory = TrajectoryFamily::kDolly;
    return spec;
  }
  if (name == "orbit") {
    spec.trajectory = TrajectoryFamily::kOrbit;
    return spec;
  }
  if (name == "clutter") {
    Box box;
    box.center = Eigen::Vector3d(0.0, 0.62, 2.70);
    box.half_sizes = Eigen::Vector3d(0.25, 0.10, 0.15);
    box.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitY()).toRotationMatrix();
    spec.statics.push_back(box);
    return spec;
  }
  throw InputShapeError(
      "unknown scene preset \"" + name +
      "\"; expected one of: static, dynamic, dolly, orbit, clutter");
}

Scene::Scene(const SceneSpec& spec) : spec_(spec) {
  spec_.validate();
  poses_ = build_trajectory(spec_);
}

Scene::RayHit Scene::cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir_z1,
                          int frame) const {
  RayHit hit;
  double best = std::numeric_limits<double>::infinity();

  if (spec_.has_wall && std::abs(dir_z1.z()) > 1e-15) {
    const double s = (spec_.wall_distance - origin.z()) / dir_z1.z();
    if (s > kRayMin && s < best) {
      best = s;
      hit.object = 0;
    }
  }
  for (std::size_t i = 0; i < spec_.statics.size(); ++i) {
    double s = 0.0;
    if (intersect_box(spec_.statics[i], origin, dir_z1, &s) && s < best) {
      best = s;
      hit.object = static_cast<int>(i) + 1;
    }
  }
  if (spec_.dynamic) {
    const PoseSE3 pose = spec_.dynamic->pose_at(frame);
    Box moved = spec_.dynamic->base;
    moved.center = pose.translation;
    moved.rotation = pose.rotation;
    double s = 0.0;
    if (intersect_box(moved, origin, dir_z1, &s) && s < best) {
      best = s;
      hit.object = kDynamicId;
    }
  }
  hit.depth = best;
  return hit;
}

bool Scene::occluded(const Eigen::Vector3d& world_point, double camera_depth, int frame,
                     const Eigen::Vector3d& camera_center) const {
  // Re-cast toward the point with a z-normalized direction so the hit
  // parameter is directly comparable to the point's camera depth.
  const Eigen::Vector3d dir = (world_point - camera_center) / camera_depth;
  const RayHit hit = cast(camera_center, dir, frame);
  if (hit.object < 0) return false;
  return hit.depth < camera_depth * (1.0 - kOcclusionRel);
}

FrameRender Scene::render_frame(int t) const {
  if (t < 0 || t >= spec_.frames) {
    std::ostringstream msg;
    msg << "frame index " << t << " outside [0, " << spec_.frames << ")";
    throw InputShapeError(msg.str());
  }
  const int h = spec_.intrinsics.height;
  const int w = spec_.intrinsics.width;
  const PoseSE3& pose = poses_[static_cast<std::size_t>(t)];

  FrameRender out;
  out.depth = DepthMap(h, w);
  out.depth.valid.assign(static_cast<std::size_t>(h) * w, 1);
  out.cloud = FrameCloud(h, w);
  out.cloud.valid.assign(static_cast<std::size_t>(h) * w, 1);
  out.dynamic_mask = corr::ConfidenceMask(h, w, 0.0);

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * w + c;
      const Eigen::Vector3d ray_cam = spec_.intrinsics.ray(c + 0.5, r + 0.5);
      const Eigen::Vector3d dir = pose.rotation * ray_cam;  // camera z component is 1
      const RayHit hit = cast(pose.translation, dir, t);
      if (hit.object < 0) {
        out.depth.values[idx] = 0.0;
        out.depth.valid[idx] = 0;
        out.cloud.valid[idx] = 0;
        continue;
      }
      out.depth.values[idx] = hit.depth;
      out.cloud.points[idx] = hit.depth * ray_cam;
      if (hit.object == kDynamicId) out.dynamic_mask.values[idx] = 1.0;
    }
  }
  return out;
}

corr::FlowField Scene::render_flow(int frame_i, int frame_j) const {
  if (frame_i < 0 || frame_i >= spec_.frames || frame_j < 0 || frame_j >= spec_.frames) {
    std::ostringstream msg;
    msg << "flow frame pair (" << frame_i << ", " << frame_j << ") outside [0, " << spec_.frames
        << ")";
    throw InputShapeError(msg.str());
  }
  const int h = spec_.intrinsics.height;
  const int w = spec_.intrinsics.width;
  const PoseSE3& pose_i = poses_[static_cast<std::size_t>(frame_i)];
  const PoseSE3& pose_j = poses_[static_cast<std::size_t>(frame_j)];
  const PoseSE3 world_to_j = pose_j.inverse();

  corr::FlowField flow(h, w);

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * w + c;
      const double u_i = c + 0.5;
      const double v_i = r + 0.5;
      const Eigen::Vector3d ray_cam = spec_.intrinsics.ray(u_i, v_i);
      const Eigen::Vector3d dir = pose_i.rotation * ray_cam;
      const RayHit hit = cast(pose_i.translation, dir, frame_i);
      if (hit.object < 0) continue;

      Eigen::Vector3d world = pose_i.translation + hit.depth * dir;
      if (hit.object == kDynamicId) {
        // Carry the surface point along the object's rigid motion.
        const PoseSE3 obj_i = spec_.dynamic->pose_at(frame_i);
        const PoseSE3 obj_j = spec_.dynamic->pose_at(frame_j);
        world = obj_j.apply(obj_i.inverse().apply(world));
      }

      const Eigen::Vector3d cam_j = world_to_j.apply(world);
      if (cam_j.z() <= kRayMin) continue;
      const double u_j = spec_.intrinsics.fx * cam_j.x() / cam_j.z() + spec_.intrinsics.cx;
      const double v_j = spec_.intrinsics.fy * cam_j.y() / cam_j.z() + spec_.intrinsics.cy;
      if (u_j < 0.0 || u_j > static_cast<double>(w) || v_j < 0.0 ||
          v_j > static_cast<double>(h)) {
        continue;
      }
      if (occluded(world, cam_j.z(), frame_j, pose_j.translation)) continue;

      flow.du[idx] = u_j - u_i;
      flow.dv[idx] = v_j - v_i;
      flow.valid[idx] = 1;
    }
  }
  return flow;
}

TrackBundle Scene::render_tracks(int grid) const {
  if (grid < 1) {
    std::ostringstream msg;
    msg << "track grid must be at least 1, got " << grid;
    throw InputShapeError(msg.str());
  }
  const int h = spec_.intrinsics.height;
  const int w = spec_.intrinsics.width;
  const int n_frames = spec_.frames;

  // Seed points on a near-uniform grid snapped to exact pixel centers so the
  // query-frame track positions coincide with rendered pixels.
  std::vector<double> us, vs;
  us.reserve(static_cast<std::size_t>(grid));
  vs.reserve(static_cast<std::size_t>(grid));
  for (int k = 0; k < grid; ++k) {
    const double fu = w * (k + 0.5) / grid;
    const double fv = h * (k + 0.5) / grid;
    us.push_back(std::min(std::floor(fu), static_cast<double>(w - 1)) + 0.5);
    vs.push_back(std::min(std::floor(fv), static_cast<double>(h - 1)) + 0.5);
  }

  TrackBundle bundle;
  const int n_tracks = grid * grid;
  bundle.tracks.num_tracks = n_tracks;
  bundle.tracks.num_frames = n_frames;
  bundle.tracks.query_frame = 0;
  bundle.tracks.positions.assign(static_cast<std::size_t>(n_tracks) * n_frames,
                                 Eigen::Vector2d::Zero());
  bundle.tracks.visible.assign(static_cast<std::size_t>(n_tracks) * n_frames, 0);
  bundle.world_points.assign(static_cast<std::size_t>(n_tracks),
                             std::vector<Eigen::Vector3d>(static_cast<std::size_t>(n_frames),
                                                          Eigen::Vector3d::Zero()));

  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int track = gy * grid + gx;
      const double u0 = us[static_cast<std::size_t>(gx)];
      const double v0 = vs[static_cast<std::size_t>(gy)];
      const Eigen::Vector3d ray_cam = spec_.intrinsics.ray(u0, v0);
      const Eigen::Vector3d dir = poses_[0].rotation * ray_cam;
      const RayHit hit = cast(poses_[0].translation, dir, 0);
      if (hit.object < 0) continue;  // open sky: the track never materializes
      const Eigen::Vector3d world0 = poses_[0].translation + hit.depth * dir;
      const bool is_dynamic = hit.object == kDynamicId;

      for (int t = 0; t < n_frames; ++t) {
        Eigen::Vector3d world = world0;
        if (is_dynamic) {
          const PoseSE3 obj_0 = spec_.dynamic->pose_at(0);
          const PoseSE3 obj_t = spec_.dynamic->pose_at(t);
          world = obj_t.apply(obj_0.inverse().apply(world0));
        }
        const std::size_t idx =
            static_cast<std::size_t>(track) * n_frames + static_cast<std::size_t>(t);
        bundle.world_points[static_cast<std::size_t>(track)][static_cast<std::size_t>(t)] = world;

        const PoseSE3& pose_t = poses_[static_cast<std::size_t>(t)];
        const Eigen::Vector3d cam = pose_t.inverse().apply(world);
        if (cam.z() <= kRayMin) continue;
        double u = spec_.intrinsics.fx * cam.x() / cam.z() + spec_.intrinsics.cx;
        double v = spec_.intrinsics.fy * cam.y() / cam.z() + spec_.intrinsics.cy;
        if (t == 0) {
          // The query-frame position is the seed pixel center by definition;
          // skip the projection round trip and its last-ulp wobble.
          u = u0;
          v = v0;
        }
        bundle.tracks.positions[idx] = Eigen::Vector2d(u, v);
        if (u < 0.0 || u > static_cast<double>(w) || v < 0.0 || v > static_cast<double>(h)) {
          continue;
        }
        if (occluded(world, cam.z(), t, pose_t.translation)) continue;
        bundle.tracks.visible[idx] = 1;
      }
    }
  }
  return bundle;
}

OracleScene Scene::render_all(int track_grid) const {
  OracleScene out;
  out.intrinsics = spec_.intrinsics;
  out.poses = poses_;
  out.depths.reserve(static_cast<std::size_t>(spec_.frames));
  out.clouds.reserve(static_cast<std::size_t>(spec_.frames));
  out.dynamic_masks.reserve(static_cast<std::size_t>(spec_.frames));
  for (int t = 0; t < spec_.frames; ++t) {
    FrameRender fr = render_frame(t);
    out.depths.push_back(std::move(fr.depth));
    out.clouds.push_back(std::move(fr.cloud));
    out.dynamic_masks.push_back(std::move(fr.dynamic_mask));
  }
  out.flows.reserve(static_cast<std::size_t>(std::max(0, spec_.frames - 1)));
  for (int t = 0; t + 1 < spec_.frames; ++t) {
    out.flows.push_back(render_flow(t, t + 1));
  }
  out.tracks = render_tracks(track_grid);
  return out;
}

FrameRender render_frame(const SceneSpec& spec, int t) { return Scene(spec).render_frame(t); }

corr::FlowField render_flow(const SceneSpec& spec, int frame_i, int frame_j) {
  return Scene(spec).render_flow(frame_i, frame_j);
}

TrackBundle render_tracks(const SceneSpec& spec, int grid) {
  return Scene(spec).render_tracks(grid);
}

}  // namespace mono4d::synth
