#include "mono4d/loss.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "mono4d/errors.hpp"
#include "mono4d/parallel.hpp"

namespace mono4d::loss {
namespace {

constexpr double kBceEps = 1e-7;
constexpr double kMinSupportMass = 3.0;

void check_pairs(const corr::PairedPoints& pairs, double normalizer, const char* term) {
  if (!(normalizer > 0.0) || !std::isfinite(normalizer)) {
    std::ostringstream msg;
    msg << term << " normalizer must be positive and finite, got " << normalizer;
    throw NumericError(msg.str());
  }
  const double mass = pairs.mass();
  if (mass < kMinSupportMass) {
    std::ostringstream msg;
    msg << term << " has insufficient support: total correspondence weight " << mass
        << " is below " << kMinSupportMass;
    throw DegeneracyError(msg.str());
  }
}

align::CorrespondenceSet to_correspondences(const corr::PairedPoints& pairs) {
  align::CorrespondenceSet corr;
  corr.src = pairs.b;
  corr.dst = pairs.a;
  corr.weights = pairs.w;
  return corr;
}

/// Σ wₖ ‖aₖ − T(bₖ)‖ with compensated accumulation.
double weighted_residual_sum(const corr::PairedPoints& pairs,
                             const std::function<Eigen::Vector3d(const Eigen::Vector3d&)>& map_b) {
  KahanSum sum;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    sum.add(pairs.w[k] * (pairs.a[k] - map_b(pairs.b[k])).norm());
  }
  return sum.value();
}

}  // namespace

double LossReport::weighted_sum(const LossWeights& weights) const {
  return weights.flow * flow.value + weights.track * track.value + weights.mask * mask.value +
         weights.shape * shape.value + weights.intrinsic * intrinsic.value;
}

double photometric_3d_loss(const corr::PairedPoints& pairs, const PoseSE3& pose_ba,
                           double normalizer) {
  check_pairs(pairs, normalizer, "photometric 3D loss");
  const double sum = weighted_residual_sum(
      pairs, [&pose_ba](const Eigen::Vector3d& b) { return pose_ba.apply(b); });
  return sum / (pairs.mass() * normalizer);
}

double shape_loss(const corr::PairedPoints& pairs, double normalizer) {
  check_pairs(pairs, normalizer, "shape loss");
  const core::SimTransform sim = align::umeyama_similarity(to_correspondences(pairs), true);
  const double sum =
      weighted_residual_sum(pairs, [&sim](const Eigen::Vector3d& b) { return sim.apply(b); });
  return sum / (pairs.mass() * normalizer);
}

double mask_bce_loss(const corr::ConfidenceMask& predicted, const corr::ConfidenceMask& target) {
  predicted.validate();
  target.validate();
  if (predicted.height != target.height || predicted.width != target.width) {
    std::ostringstream msg;
    msg << "mask cross entropy needs matching sizes, got " << predicted.height << "x"
        << predicted.width << " vs " << target.height << "x" << target.width;
    throw InputShapeError(msg.str());
  }
  if (predicted.size() == 0) {
    throw InputShapeError("mask cross entropy over an empty mask is undefined");
  }
  KahanSum sum;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double p = std::min(1.0 - kBceEps, std::max(kBceEps, predicted.values[i]));
    const double t = target.values[i];
    sum.add(-(t * std::log(p) + (1.0 - t) * std::log1p(-p)));
  }
  return sum.value() / static_cast<double>(predicted.size());
}

double intrinsic_consistency_loss(const std::vector<CameraIntrinsics>& per_frame) {
  if (per_frame.empty()) {
    throw InputShapeError("intrinsic consistency needs at least one frame");
  }
  Eigen::Matrix3d mean = Eigen::Matrix3d::Zero();
  for (const auto& k : per_frame) mean += k.matrix();
  mean /= static_cast<double>(per_frame.size());
  KahanSum sum;
  for (const auto& k : per_frame) sum.add((k.matrix() - mean).norm());
  return sum.value() / static_cast<double>(per_frame.size());
}

LossReport evaluate_scene_losses(const SceneLossData& data, const LossWeights& weights) {
  const std::size_t n = data.clouds.size();
  if (n == 0) throw InputShapeError("scene loss evaluation needs at least one frame");
  if (data.poses.size() != n) {
    std::ostringstream msg;
    msg << "got " << data.poses.size() << " poses for " << n << " frames";
    throw InputShapeError(msg.str());
  }
  if (!data.flows.empty() && data.flows.size() != n - 1) {
    std::ostringstream msg;
    msg << "got " << data.flows.size() << " flow fields for " << n
        << " frames; expected one per adjacent pair (" << n - 1 << ")";
    throw InputShapeError(msg.str());
  }
  if (data.masks.size() != n) {
    std::ostringstream msg;
    msg << "got " << data.masks.size() << " confidence masks for " << n << " frames";
    throw InputShapeError(msg.str());
  }
  if (!data.pseudo_masks.empty() && data.pseudo_masks.size() != n) {
    std::ostringstream msg;
    msg << "got " << data.pseudo_masks.size() << " pseudo masks for " << n << " frames";
    throw InputShapeError(msg.str());
  }
  if (data.tracks != nullptr) {
    data.tracks->validate();
    if (static_cast<std::size_t>(data.tracks->num_frames) != n) {
      std::ostringstream msg;
      msg << "track set spans " << data.tracks->num_frames << " frames, scene has " << n;
      throw InputShapeError(msg.str());
    }
  }

  // Spread of each frame's cloud, the common normalizer of all 3D terms.
  std::vector<double> spread(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto pts = data.clouds[t].valid_points();
    spread[t] = pts.empty() ? 0.0 : align::principal_scale(pts);
  }

  auto pose_between = [&data](std::size_t i, std::size_t j) {
    return data.poses[i].inverse().compose(data.poses[j]);  // frame j camera -> frame i camera
  };

  LossReport report;
  KahanSum flow_sum, track_sum, shape_sum;

  auto add_pair = [&](const corr::PairedPoints& pairs, std::size_t i, std::size_t j,
                      KahanSum* photometric_sum, TermReport* photometric_term) {
    if (pairs.mass() < kMinSupportMass || spread[j] <= 0.0) return;
    photometric_sum->add(photometric_3d_loss(pairs, pose_between(i, j), spread[j]));
    photometric_term->count += 1;
    shape_sum.add(shape_loss(pairs, spread[j]));
    report.shape.count += 1;
  };

  for (std::size_t t = 0; t + 1 < n && !data.flows.empty(); ++t) {
    const corr::PairedPoints pairs = corr::pair_by_flow(data.clouds[t], data.clouds[t + 1],
                                                        data.flows[t], data.masks[t],
                                                        data.masks[t + 1]);
    add_pair(pairs, t, t + 1, &flow_sum, &report.flow);
  }

  if (data.tracks != nullptr) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const corr::PairedPoints pairs =
            corr::pair_by_tracks(data.clouds[i], data.clouds[j], *data.tracks, static_cast<int>(i),
                                 static_cast<int>(j), data.masks[i], data.masks[j]);
        add_pair(pairs, i, j, &track_sum, &report.track);
      }
    }
  }

  if (report.flow.count > 0) report.flow.value = flow_sum.value() / report.flow.count;
  if (report.track.count > 0) report.track.value = track_sum.value() / report.track.count;
  if (report.shape.count > 0) report.shape.value = shape_sum.value() / report.shape.count;

  if (!data.pseudo_masks.empty()) {
    KahanSum bce;
    for (std::size_t t = 0; t < n; ++t) {
      bce.add(mask_bce_loss(data.masks[t], data.pseudo_masks[t]) *
              static_cast<double>(data.masks[t].size()));
      report.mask.count += data.masks[t].size();
    }
    if (report.mask.count > 0) {
      report.mask.value = bce.value() / static_cast<double>(report.mask.count);
    }
  }

  if (!data.per_frame_intrinsics.empty()) {
    report.intrinsic.value = intrinsic_consistency_loss(data.per_frame_intrinsics);
    report.intrinsic.count = data.per_frame_intrinsics.size();
  }

  report.total = report.weighted_sum(weights);
  return report;
}

}  // namespace mono4d::loss
