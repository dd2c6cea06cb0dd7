#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mono4d/core.hpp"

namespace mono4d::align {

using core::PoseSE3;
using core::SimTransform;

/// Weighted 3D point pairs. weights are per-pair confidences >= 0; the
/// absolute weight scale carries no meaning (solvers normalize by the mass).
struct CorrespondenceSet {
  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> dst;
  std::vector<double> weights;

  std::size_t size() const { return src.size(); }
  void add(const Eigen::Vector3d& s, const Eigen::Vector3d& d, double w) {
    src.push_back(s);
    dst.push_back(d);
    weights.push_back(w);
  }
  void validate() const;
};

/// Mass-normalized first and second moments of a correspondence set,
/// accumulated in two passes (centroids first, then the cross-covariance).
/// cross = Σ (wₖ/mass) (srcₖ−μs)(dstₖ−μd)ᵀ, src_var = Σ (wₖ/mass) ‖srcₖ−μs‖².
struct AlignmentStats {
  Eigen::Vector3d src_centroid = Eigen::Vector3d::Zero();
  Eigen::Vector3d dst_centroid = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
  double src_var = 0.0;
  double mass = 0.0;
  std::size_t support = 0;  // pairs with weight > 0
};

AlignmentStats accumulate_stats(const CorrespondenceSet& corr);

/// Closed-form argmin over (R, t) of Σ wₖ ‖dstₖ − (R srcₖ + t)‖².
/// The rotation comes from the SVD of the weighted cross-covariance with the
/// usual det(VUᵀ) sign correction. Throws DegeneracyError when fewer than 3
/// pairs carry positive weight or when the second singular value of the
/// cross-covariance falls below 1e-10 of the largest (collinear sources); the
/// error message names the deficient axis.
PoseSE3 weighted_procrustes(const CorrespondenceSet& corr);
PoseSE3 weighted_procrustes(const AlignmentStats& stats);

/// Closed-form argmin over (s, R, t) of Σ wₖ ‖dstₖ − (s R srcₖ + t)‖² with
/// s > 0. with_scale = false pins s = 1 and reduces to the rigid solve.
SimTransform umeyama_similarity(const CorrespondenceSet& corr, bool with_scale);
SimTransform umeyama_similarity(const AlignmentStats& stats, bool with_scale);

/// Standard deviation of a point set along its first principal axis: the
/// square root of the largest eigenvalue of the centered covariance (1/N
/// normalization). Per-axis spread, not a raw singular value of the stacked
/// coordinates, so the value is independent of how many points sample the
/// same shape. Throws DegeneracyError on an empty set.
double principal_scale(const std::vector<Eigen::Vector3d>& points);

/// Centered population covariance (1/N) of a point set.
Eigen::Matrix3d centered_covariance(const std::vector<Eigen::Vector3d>& points,
                                    Eigen::Vector3d* centroid = nullptr);

struct PrincipalAxis {
  double scale = 0.0;          // sqrt of the largest eigenvalue
  Eigen::Vector3d axis = Eigen::Vector3d::UnitX();  // matching unit eigenvector
};

PrincipalAxis principal_axis_from_covariance(const Eigen::Matrix3d& covariance);

}  // namespace mono4d::align
