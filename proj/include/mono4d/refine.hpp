#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mono4d/align.hpp"
#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"
#include "mono4d/loss.hpp"

// Per-scene refinement: block-coordinate descent over per-frame log depth
// scales and one shared log focal correction. Scaling depth frame t by
// exp(sigma_t) and the focal length by exp(phi) acts on a pinhole cloud
// component-wise, point' = (x exp(sigma - phi), y exp(sigma - phi),
// z exp(sigma)), so correspondences, moment matrices, and spread covariances
// are precomputed once on the base clouds and rescaled in closed form per
// evaluation. Poses are re-solved in closed form after every scale update and
// a step is accepted only if the re-solved total loss does not increase. Scale
// steps start from a similarity-scale chain initialization and use a
// Barzilai-Borwein step length under monotone backtracking.

namespace mono4d::refine {

using core::PoseSE3;

struct RefineParams {
  loss::LossWeights weights;
  int max_iterations = 200;
  double step = 0.05;                 // initial gradient step length
  double relative_tolerance = 1e-7;   // stop when an accepted step improves less
  int max_step_halvings = 20;         // per iteration, then the loop stops
  bool optimize_focal = true;

  void validate() const;
};

struct RefineResult {
  std::vector<double> log_scales;  // per frame; entry 0 pinned to 0
  double log_focal = 0.0;
  std::vector<PoseSE3> poses;      // camera-to-world, re-solved at the final scales
  std::vector<double> trace;       // accepted total loss per iteration, non-increasing
  int iterations = 0;
  bool converged = false;          // true when the tolerance stopped the loop
};

/// Chains closed-form rigid solves over adjacent frame pairs: correspondences
/// come from the flow fields when present, otherwise from the tracks. Returns
/// camera-to-world poses anchored at frame 0. Throws DegeneracyError naming
/// the frame pair when a link has too little support.
std::vector<PoseSE3> solve_window_poses(const std::vector<core::FrameCloud>& clouds,
                                        const std::vector<corr::FlowField>& flows,
                                        const std::vector<corr::ConfidenceMask>& masks,
                                        const corr::TrackSet* tracks = nullptr);

/// The refinement objective: the flow, track, and shape terms of the scene
/// loss as a function of (log_scales, log_focal) at fixed poses. The mask and
/// intrinsic terms do not depend on either variable and are left out. Pair
/// sets, their moment statistics, and per-frame cloud covariances are fixed at
/// construction; every evaluation is closed-form in the scales.
class RefineObjective {
 public:
  RefineObjective(const loss::SceneLossData& base, const loss::LossWeights& weights);

  std::size_t frame_count() const { return frames_; }
  std::size_t pair_count() const { return pairs_.size(); }

  /// Re-solves all camera poses from the adjacent-pair correspondences at the
  /// given scales.
  std::vector<PoseSE3> solve_poses(const std::vector<double>& log_scales,
                                   double log_focal) const;

  /// Log scales that equalize the similarity-fit scale along the adjacent
  /// chain, anchored at frame 0. On per-frame depth rescalings this lands at
  /// the compensating scales directly; the optimizer starts here when it
  /// beats the zero initialization.
  std::vector<double> chain_initial_scales() const;

  double evaluate(const std::vector<double>& log_scales, double log_focal,
                  const std::vector<PoseSE3>& poses) const;

  /// Analytic gradient at fixed poses, one entry per frame plus the focal
  /// direction. No coordinate is pinned here; the optimizer zeroes the anchor
  /// frame's component to fix the gauge.
  void gradient(const std::vector<double>& log_scales, double log_focal,
                const std::vector<PoseSE3>& poses, std::vector<double>* d_scales,
                double* d_focal) const;

  /// Central-difference gradient of evaluate() over the same coordinates.
  void numeric_gradient(const std::vector<double>& log_scales, double log_focal,
                        const std::vector<PoseSE3>& poses, std::vector<double>* d_scales,
                        double* d_focal, double step = 1e-5) const;

 private:
  struct PairTerm {
    int i = 0;
    int j = 0;
    bool dense = false;              // counts toward the flow term, else the track term
    corr::PairedPoints base;         // a in frame i coordinates, b in frame j
    align::AlignmentStats stats;     // src = b, dst = a, mass-normalized
    Eigen::Vector3d src_axis_var = Eigen::Vector3d::Zero();  // per-axis Σ w̃ (b−μ)²
  };

  align::AlignmentStats scaled_stats(const PairTerm& pair, const std::vector<double>& log_scales,
                                     double log_focal) const;
  std::vector<const PairTerm*> adjacent_links() const;

  std::size_t frames_ = 0;
  loss::LossWeights weights_;
  std::vector<PairTerm> pairs_;
  std::vector<Eigen::Matrix3d> base_cov_;  // per frame, centered covariance of the cloud
  std::size_t flow_pairs_ = 0;
  std::size_t track_pairs_ = 0;
};

/// Runs the block-coordinate refinement starting from zero scales. With a
/// zero iteration budget the result is the input scales plus one pose solve.
RefineResult refine_scene(const loss::SceneLossData& data, const RefineParams& params = {});

}  // namespace mono4d::refine
