#include "mono4d/core.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <sstream>

namespace mono4d::core {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy) ||
      !std::isfinite(cx) || !std::isfinite(cy)) {
    std::ostringstream msg;
    msg << "intrinsics require finite positive focal lengths, got fx=" << fx << " fy=" << fy;
    throw InputShapeError(msg.str());
  }
  if (width <= 0 || height <= 0) {
    std::ostringstream msg;
    msg << "intrinsics require a positive image size, got " << width << "x" << height;
    throw InputShapeError(msg.str());
  }
}

PoseSE3 PoseSE3::compose(const PoseSE3& other) const {
  PoseSE3 out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  out.chain_depth = chain_depth + other.chain_depth + 1;
  if (out.chain_depth > 64) out.orthonormalize();
  return out;
}

void PoseSE3::orthonormalize() {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  rotation = r;
  chain_depth = 0;
}

double PoseSE3::orthonormality_error() const {
  double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho + std::abs(rotation.determinant() - 1.0);
}

void PoseSE3::validate(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite())
    throw NumericError("pose contains non-finite entries");
  double err = orthonormality_error();
  if (err > tol) {
    std::ostringstream msg;
    msg << "pose rotation is not orthonormal: deviation " << err << " exceeds " << tol;
    throw NumericError(msg.str());
  }
}

SimTransform SimTransform::inverse() const {
  SimTransform inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation) / scale;
  return inv;
}

void SimTransform::validate(double tol) const {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw NumericError("similarity scale must be finite and positive");
  if (!rotation.allFinite() || !translation.allFinite())
    throw NumericError("similarity contains non-finite entries");
  double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() +
                 std::abs(rotation.determinant() - 1.0);
  if (ortho > tol) {
    std::ostringstream msg;
    msg << "similarity rotation is not orthonormal: deviation " << ortho << " exceeds " << tol;
    throw NumericError(msg.str());
  }
}

DepthMap DepthMap::from_values(int h, int w, std::vector<double> v) {
  if (v.size() != std::size_t(h) * w) {
    std::ostringstream msg;
    msg << "depth raster size " << v.size() << " does not match " << h << "x" << w;
    throw InputShapeError(msg.str());
  }
  DepthMap d;
  d.height = h;
  d.width = w;
  d.values = std::move(v);
  d.valid.assign(d.values.size(), 0);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (std::isfinite(d.values[i]) && d.values[i] > 0.0) {
      d.valid[i] = 1;
    } else {
      d.values[i] = 0.0;
    }
  }
  return d;
}

std::size_t FrameCloud::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

std::vector<Eigen::Vector3d> FrameCloud::valid_points() const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(size());
  for (std::size_t i = 0; i < points.size(); ++i)
    if (valid[i]) out.push_back(points[i]);
  return out;
}

void CloudSequence::validate() const {
  if (frames.size() != poses.size()) {
    std::ostringstream msg;
    msg << "sequence has " << frames.size() << " frames but " << poses.size() << " poses";
    throw InputShapeError(msg.str());
  }
  intrinsics.validate();
  for (const auto& p : poses) p.validate();
  if (!poses.empty()) {
    double anchor = poses[0].orthonormality_error() +
                    (poses[0].rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() +
                    poses[0].translation.cwiseAbs().maxCoeff();
    if (anchor > 1e-9) throw NumericError("sequence is not anchored: frame 0 pose is not the identity");
  }
}

FrameCloud unproject(const DepthMap& depth, const CameraIntrinsics& intrinsics) {
  intrinsics.validate();
  if (depth.height != intrinsics.height || depth.width != intrinsics.width) {
    std::ostringstream msg;
    msg << "depth raster " << depth.height << "x" << depth.width
        << " does not match intrinsics " << intrinsics.height << "x" << intrinsics.width;
    throw InputShapeError(msg.str());
  }
  FrameCloud cloud(depth.height, depth.width);
  for (int r = 0; r < depth.height; ++r) {
    double v = r + 0.5;
    for (int c = 0; c < depth.width; ++c) {
      std::size_t i = depth.index(r, c);
      if (!depth.valid[i]) continue;
      double u = c + 0.5;
      cloud.points[i] = depth.values[i] * intrinsics.ray(u, v);
      cloud.valid[i] = 1;
    }
  }
  return cloud;
}

Eigen::Vector2d project(const CameraIntrinsics& intrinsics, const Eigen::Vector3d& point) {
  if (!(point.z() > 0.0)) {
    std::ostringstream msg;
    msg << "cannot project point with non-positive depth z=" << point.z();
    throw NumericError(msg.str());
  }
  return {intrinsics.fx * point.x() / point.z() + intrinsics.cx,
          intrinsics.fy * point.y() / point.z() + intrinsics.cy};
}

FrameCloud transform(const FrameCloud& cloud, const PoseSE3& pose) {
  FrameCloud out = cloud;
  for (std::size_t i = 0; i < out.points.size(); ++i)
    if (out.valid[i]) out.points[i] = pose.apply(cloud.points[i]);
  return out;
}

CloudSequence assemble_global(const std::vector<FrameCloud>& clouds,
                              const std::vector<PoseSE3>& poses,
                              const CameraIntrinsics& intrinsics) {
  if (clouds.size() != poses.size()) {
    std::ostringstream msg;
    msg << "assemble_global got " << clouds.size() << " clouds and " << poses.size() << " poses";
    throw InputShapeError(msg.str());
  }
  if (clouds.empty()) throw InputShapeError("assemble_global requires at least one frame");
  CloudSequence seq;
  seq.intrinsics = intrinsics;
  PoseSE3 anchor = poses[0].inverse();
  seq.frames.reserve(clouds.size());
  seq.poses.reserve(poses.size());
  for (std::size_t t = 0; t < clouds.size(); ++t) {
    PoseSE3 rel = anchor.compose(poses[t]);
    if (t == 0) rel = PoseSE3::identity();  // exact anchoring, no fp residue
    seq.poses.push_back(rel);
    seq.frames.push_back(transform(clouds[t], rel));
  }
  return seq;
}

}  // namespace mono4d::core
