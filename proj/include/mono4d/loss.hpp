#pragma once

#include <cstddef>
#include <vector>

#include "mono4d/align.hpp"
#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"

// Self-supervised consistency losses over a reconstructed scene. All geometric
// terms are normalized by the spatial spread of the target frame's cloud
// (align::principal_scale), which makes every term, and therefore the weighted
// total, invariant to a global rescaling of the scene.

namespace mono4d::loss {

using core::CameraIntrinsics;
using core::PoseSE3;

struct LossWeights {
  double flow = 4.0;       // dense 3D alignment along optical flow
  double track = 5.0;      // sparse 3D alignment along point tracks
  double mask = 5.0;       // confidence-mask cross entropy
  double shape = 1.0;      // similarity-aligned cloud shape consistency
  double intrinsic = 0.005;  // spread of per-frame intrinsics
};

/// One unweighted term plus how many atomic contributions entered it
/// (frame pairs for flow/track/shape, pixels for mask, frames for intrinsic).
struct TermReport {
  double value = 0.0;
  std::size_t count = 0;
};

struct LossReport {
  TermReport flow;
  TermReport track;
  TermReport mask;
  TermReport shape;
  TermReport intrinsic;
  double total = 0.0;

  /// Recomputes the weighted sum of the term values.
  double weighted_sum(const LossWeights& weights) const;
};

/// Mean 3D misalignment of paired points under a rigid transform, relative to
/// the scene spread: Σ wₖ ‖aₖ − T(bₖ)‖ / (Σ wₖ · normalizer). The pairs carry
/// a in one frame's camera coordinates and b in the other's; pose_ba maps b's
/// frame into a's. Throws DegeneracyError when the total weight is below 3
/// and NumericError for a non-positive normalizer.
double photometric_3d_loss(const corr::PairedPoints& pairs, const PoseSE3& pose_ba,
                           double normalizer);

/// Scale-free shape consistency: fits the best similarity transform b -> a in
/// the least-squares sense, then reports the mean unsquared residual
/// Σ wₖ ‖aₖ − S(bₖ)‖ / (Σ wₖ · normalizer). Same degeneracy rules as above.
double shape_loss(const corr::PairedPoints& pairs, double normalizer);

/// Mean binary cross entropy of `predicted` against `target`, with predictions
/// clamped to [eps, 1 - eps], eps = 1e-7. Throws InputShapeError on size
/// mismatch.
double mask_bce_loss(const corr::ConfidenceMask& predicted, const corr::ConfidenceMask& target);

/// Mean Frobenius distance of each frame's intrinsic matrix from the mean
/// intrinsic matrix. Exactly zero when all frames share one set of intrinsics.
double intrinsic_consistency_loss(const std::vector<CameraIntrinsics>& per_frame);

/// Everything needed to evaluate a scene's losses. clouds are per-frame
/// camera-coordinate clouds; poses are camera-to-world. flows, when present,
/// must hold exactly one field per adjacent pair (t -> t+1). masks weight the
/// correspondences; pseudo_masks, when present, serve as targets for the mask
/// cross-entropy term. per_frame_intrinsics, when present, feeds the
/// intrinsic-spread term (a single shared set contributes zero).
struct SceneLossData {
  std::vector<core::FrameCloud> clouds;
  std::vector<PoseSE3> poses;
  std::vector<corr::FlowField> flows;
  const corr::TrackSet* tracks = nullptr;
  std::vector<corr::ConfidenceMask> masks;
  std::vector<corr::ConfidenceMask> pseudo_masks;
  std::vector<CameraIntrinsics> per_frame_intrinsics;
};

/// Evaluates every loss term over a scene. The flow term runs over adjacent
/// frame pairs, the track term over all ordered frame pairs with common
/// visibility, and the shape term over both pair sets. Frame pairs whose
/// common support is too small are skipped rather than failing the scene.
LossReport evaluate_scene_losses(const SceneLossData& data, const LossWeights& weights = {});

}  // namespace mono4d::loss
