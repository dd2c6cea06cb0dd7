#include "mono4d/align.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <sstream>

#include "mono4d/parallel.hpp"

namespace mono4d::align {

namespace {

constexpr double kRankRatio = 1e-10;

struct RotationSolve {
  Eigen::Matrix3d rotation;
  double trace_ds = 0.0;  // tr(D Σ): σ1 + σ2 ± σ3 after the sign correction
};

// Rotation maximizing tr(R * cross). Throws on rank deficiency.
RotationSolve solve_rotation(const Eigen::Matrix3d& cross) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sigma = svd.singularValues();
  if (!(sigma(0) > 0.0)) {
    throw DegeneracyError(
        "degenerate correspondences: cross-covariance is zero (no spread about the centroids)");
  }
  if (sigma(1) <= kRankRatio * sigma(0)) {
    Eigen::Vector3d axis = svd.matrixU().col(0);
    std::ostringstream msg;
    msg << "rank-deficient correspondences: source spread is confined to the axis (" << axis.x()
        << ", " << axis.y() << ", " << axis.z() << "); rotation about it is unconstrained";
    throw DegeneracyError(msg.str());
  }
  double det = (svd.matrixV() * svd.matrixU().transpose()).determinant();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = det < 0.0 ? -1.0 : 1.0;
  RotationSolve out;
  out.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  out.trace_ds = sigma(0) + sigma(1) + d(2, 2) * sigma(2);
  return out;
}

}  // namespace

void CorrespondenceSet::validate() const {
  if (src.size() != dst.size() || src.size() != weights.size()) {
    std::ostringstream msg;
    msg << "correspondence lists disagree: " << src.size() << " src, " << dst.size() << " dst, "
        << weights.size() << " weights";
    throw InputShapeError(msg.str());
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
      std::ostringstream msg;
      msg << "correspondence weight " << i << " is invalid: " << weights[i];
      throw NumericError(msg.str());
    }
    if (!src[i].allFinite() || !dst[i].allFinite()) {
      std::ostringstream msg;
      msg << "correspondence " << i << " contains non-finite coordinates";
      throw NumericError(msg.str());
    }
  }
}

AlignmentStats accumulate_stats(const CorrespondenceSet& corr) {
  corr.validate();
  AlignmentStats stats;
  KahanSum mass;
  KahanSum cs[3], cd[3];
  for (std::size_t i = 0; i < corr.size(); ++i) {
    double w = corr.weights[i];
    if (w <= 0.0) continue;
    ++stats.support;
    mass.add(w);
    for (int a = 0; a < 3; ++a) {
      cs[a].add(w * corr.src[i](a));
      cd[a].add(w * corr.dst[i](a));
    }
  }
  stats.mass = mass.value();
  if (stats.mass <= 0.0) return stats;
  for (int a = 0; a < 3; ++a) {
    stats.src_centroid(a) = cs[a].value() / stats.mass;
    stats.dst_centroid(a) = cd[a].value() / stats.mass;
  }
  KahanSum cov[9], var;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    double w = corr.weights[i];
    if (w <= 0.0) continue;
    double wn = w / stats.mass;
    Eigen::Vector3d s = corr.src[i] - stats.src_centroid;
    Eigen::Vector3d d = corr.dst[i] - stats.dst_centroid;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cov[a * 3 + b].add(wn * s(a) * d(b));
    var.add(wn * s.squaredNorm());
  }
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) stats.cross(a, b) = cov[a * 3 + b].value();
  stats.src_var = var.value();
  return stats;
}

PoseSE3 weighted_procrustes(const AlignmentStats& stats) {
  if (stats.support < 3) {
    std::ostringstream msg;
    msg << "insufficient support: " << stats.support
        << " correspondences with positive weight, need at least 3";
    throw DegeneracyError(msg.str());
  }
  RotationSolve rs = solve_rotation(stats.cross);
  PoseSE3 pose;
  pose.rotation = rs.rotation;
  pose.translation = stats.dst_centroid - rs.rotation * stats.src_centroid;
  return pose;
}

PoseSE3 weighted_procrustes(const CorrespondenceSet& corr) {
  return weighted_procrustes(accumulate_stats(corr));
}

SimTransform umeyama_similarity(const AlignmentStats& stats, bool with_scale) {
  if (stats.support < 3) {
    std::ostringstream msg;
    msg << "insufficient support: " << stats.support
        << " correspondences with positive weight, need at least 3";
    throw DegeneracyError(msg.str());
  }
  RotationSolve rs = solve_rotation(stats.cross);
  SimTransform sim;
  sim.rotation = rs.rotation;
  if (with_scale) {
    if (!(stats.src_var > 0.0))
      throw DegeneracyError("degenerate correspondences: source points have zero variance");
    sim.scale = rs.trace_ds / stats.src_var;
    if (!(sim.scale > 0.0)) {
      std::ostringstream msg;
      msg << "similarity solve produced non-positive scale " << sim.scale;
      throw DegeneracyError(msg.str());
    }
  }
  sim.translation = stats.dst_centroid - sim.scale * (sim.rotation * stats.src_centroid);
  return sim;
}

SimTransform umeyama_similarity(const CorrespondenceSet& corr, bool with_scale) {
  return umeyama_similarity(accumulate_stats(corr), with_scale);
}

Eigen::Matrix3d centered_covariance(const std::vector<Eigen::Vector3d>& points,
                                    Eigen::Vector3d* centroid) {
  if (points.empty()) throw DegeneracyError("cannot take the covariance of an empty point set");
  KahanSum cs[3];
  for (const auto& p : points)
    for (int a = 0; a < 3; ++a) cs[a].add(p(a));
  Eigen::Vector3d mu;
  for (int a = 0; a < 3; ++a) mu(a) = cs[a].value() / double(points.size());
  KahanSum cov[6];
  for (const auto& p : points) {
    Eigen::Vector3d q = p - mu;
    cov[0].add(q.x() * q.x());
    cov[1].add(q.x() * q.y());
    cov[2].add(q.x() * q.z());
    cov[3].add(q.y() * q.y());
    cov[4].add(q.y() * q.z());
    cov[5].add(q.z() * q.z());
  }
  double n = double(points.size());
  Eigen::Matrix3d c;
  c << cov[0].value(), cov[1].value(), cov[2].value(),
       cov[1].value(), cov[3].value(), cov[4].value(),
       cov[2].value(), cov[4].value(), cov[5].value();
  c /= n;
  if (centroid) *centroid = mu;
  return c;
}

PrincipalAxis principal_axis_from_covariance(const Eigen::Matrix3d& covariance) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(covariance);
  if (eig.info() != Eigen::Success)
    throw NumericError("eigen decomposition of the covariance failed");
  PrincipalAxis out;
  double lambda = eig.eigenvalues()(2);  // ascending order, take the largest
  out.scale = std::sqrt(std::max(lambda, 0.0));
  out.axis = eig.eigenvectors().col(2);
  return out;
}

double principal_scale(const std::vector<Eigen::Vector3d>& points) {
  return principal_axis_from_covariance(centered_covariance(points)).scale;
}

}  // namespace mono4d::align
