#include "mono4d/refine.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "mono4d/errors.hpp"
#include "mono4d/parallel.hpp"

namespace mono4d::refine {
namespace {

constexpr double kMinSupportMass = 3.0;  // same support rule as the loss terms

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

Eigen::Vector3d vee(const Eigen::Matrix3d& b) { return {b(2, 1), b(0, 2), b(1, 0)}; }

/// Per-component factors of diag(e^{s-f}, e^{s-f}, e^{s}).
Eigen::Vector3d scale_factors(double log_scale, double log_focal) {
  const double xy = std::exp(log_scale - log_focal);
  return {xy, xy, std::exp(log_scale)};
}

/// d(scale_factors)/d(log_focal) flips the sign of the x and y components;
/// applying it to a scaled vector is component-wise multiplication by this.
const Eigen::Vector3d kFocalDir(-1.0, -1.0, 0.0);

Eigen::Vector3d focal_dir(const Eigen::Vector3d& v) {
  return {-v.x(), -v.y(), 0.0};
}

struct FrameSpread {
  double value = 0.0;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
};

/// Solves (tr(P) I - P) x = rhs for symmetric P through its eigensystem,
/// dropping directions whose eigenvalue is negligible.
Eigen::Vector3d solve_trace_complement(const Eigen::Matrix3d& p_sym, const Eigen::Vector3d& rhs) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(p_sym);
  if (eig.info() != Eigen::Success) {
    throw NumericError("eigen decomposition failed in the rotation sensitivity solve");
  }
  const Eigen::Vector3d d = eig.eigenvalues();
  const double trace = d.sum();
  const Eigen::Matrix3d v = eig.eigenvectors();
  const Eigen::Vector3d rhs_v = v.transpose() * rhs;
  Eigen::Vector3d x_v = Eigen::Vector3d::Zero();
  const double cutoff = 1e-12 * std::max({std::abs(trace - d(0)), std::abs(trace - d(1)),
                                          std::abs(trace - d(2)), 1e-300});
  for (int k = 0; k < 3; ++k) {
    const double denom = trace - d(k);
    if (std::abs(denom) > cutoff) x_v(k) = rhs_v(k) / denom;
  }
  return v * x_v;
}

}  // namespace

void RefineParams::validate() const {
  if (max_iterations < 0) {
    std::ostringstream msg;
    msg << "iteration budget must be non-negative, got " << max_iterations;
    throw InputShapeError(msg.str());
  }
  if (!(step > 0.0)) {
    std::ostringstream msg;
    msg << "gradient step must be positive, got " << step;
    throw InputShapeError(msg.str());
  }
  if (!(relative_tolerance >= 0.0)) {
    std::ostringstream msg;
    msg << "relative tolerance must be non-negative, got " << relative_tolerance;
    throw InputShapeError(msg.str());
  }
  if (max_step_halvings < 0) {
    std::ostringstream msg;
    msg << "halving budget must be non-negative, got " << max_step_halvings;
    throw InputShapeError(msg.str());
  }
}

std::vector<PoseSE3> solve_window_poses(const std::vector<core::FrameCloud>& clouds,
                                        const std::vector<corr::FlowField>& flows,
                                        const std::vector<corr::ConfidenceMask>& masks,
                                        const corr::TrackSet* tracks) {
  const std::size_t n = clouds.size();
  if (n == 0) throw InputShapeError("pose solving needs at least one frame");
  if (masks.size() != n) {
    std::ostringstream msg;
    msg << "got " << masks.size() << " confidence masks for " << n << " frames";
    throw InputShapeError(msg.str());
  }
  if (!flows.empty() && flows.size() != n - 1) {
    std::ostringstream msg;
    msg << "got " << flows.size() << " flow fields for " << n << " frames; expected " << n - 1;
    throw InputShapeError(msg.str());
  }
  if (flows.empty() && n > 1 && tracks == nullptr) {
    throw InputShapeError("pose solving needs flow fields or tracks to link the frames");
  }

  std::vector<PoseSE3> poses(n);
  poses[0] = PoseSE3::identity();
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const corr::PairedPoints pairs =
        flows.empty()
            ? corr::pair_by_tracks(clouds[t], clouds[t + 1], *tracks, static_cast<int>(t),
                                   static_cast<int>(t + 1), masks[t], masks[t + 1])
            : corr::pair_by_flow(clouds[t], clouds[t + 1], flows[t], masks[t], masks[t + 1]);
    try {
      align::CorrespondenceSet corr;
      corr.src = pairs.b;
      corr.dst = pairs.a;
      corr.weights = pairs.w;
      const PoseSE3 rel = align::weighted_procrustes(corr);  // frame t+1 -> frame t
      poses[t + 1] = poses[t].compose(rel);
    } catch (const DegeneracyError& e) {
      std::ostringstream msg;
      msg << "between frames " << t << " and " << t + 1 << ": " << e.what();
      throw DegeneracyError(msg.str());
    }
  }
  return poses;
}

RefineObjective::RefineObjective(const loss::SceneLossData& base, const loss::LossWeights& weights)
    : weights_(weights) {
  const std::size_t n = base.clouds.size();
  frames_ = n;
  if (n < 2) throw InputShapeError("refinement needs at least two frames");
  if (!base.flows.empty() && base.flows.size() != n - 1) {
    std::ostringstream msg;
    msg << "got " << base.flows.size() << " flow fields for " << n << " frames; expected "
        << n - 1;
    throw InputShapeError(msg.str());
  }
  if (base.masks.size() != n) {
    std::ostringstream msg;
    msg << "got " << base.masks.size() << " confidence masks for " << n << " frames";
    throw InputShapeError(msg.str());
  }
  if (base.tracks != nullptr) {
    base.tracks->validate();
    if (static_cast<std::size_t>(base.tracks->num_frames) != n) {
      std::ostringstream msg;
      msg << "track set spans " << base.tracks->num_frames << " frames, scene has " << n;
      throw InputShapeError(msg.str());
    }
  }

  base_cov_.assign(n, Eigen::Matrix3d::Zero());
  std::vector<double> base_spread(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto pts = base.clouds[t].valid_points();
    if (pts.empty()) continue;
    base_cov_[t] = align::centered_covariance(pts);
    base_spread[t] = align::principal_axis_from_covariance(base_cov_[t]).scale;
  }

  auto add_pair = [this, &base_spread](corr::PairedPoints&& pairs, std::size_t i, std::size_t j,
                                       bool dense) {
    if (pairs.mass() < kMinSupportMass || base_spread[j] <= 0.0) return;
    PairTerm term;
    term.i = static_cast<int>(i);
    term.j = static_cast<int>(j);
    term.dense = dense;
    align::CorrespondenceSet corr;
    corr.src = pairs.b;
    corr.dst = pairs.a;
    corr.weights = pairs.w;
    term.stats = align::accumulate_stats(corr);
    KahanSum axis_var[3];
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const Eigen::Vector3d q = pairs.b[k] - term.stats.src_centroid;
      const double wn = pairs.w[k] / term.stats.mass;
      for (int a = 0; a < 3; ++a) axis_var[a].add(wn * q(a) * q(a));
    }
    for (int a = 0; a < 3; ++a) term.src_axis_var(a) = axis_var[a].value();
    term.base = std::move(pairs);
    if (dense) {
      ++flow_pairs_;
    } else {
      ++track_pairs_;
    }
    pairs_.push_back(std::move(term));
  };

  for (std::size_t t = 0; t + 1 < n && !base.flows.empty(); ++t) {
    add_pair(corr::pair_by_flow(base.clouds[t], base.clouds[t + 1], base.flows[t], base.masks[t],
                                base.masks[t + 1]),
             t, t + 1, true);
  }
  if (base.tracks != nullptr) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        add_pair(corr::pair_by_tracks(base.clouds[i], base.clouds[j], *base.tracks,
                                      static_cast<int>(i), static_cast<int>(j), base.masks[i],
                                      base.masks[j]),
                 i, j, false);
      }
    }
  }
  if (pairs_.empty()) {
    throw DegeneracyError("no frame pair has enough correspondence support to refine");
  }
}

align::AlignmentStats RefineObjective::scaled_stats(const PairTerm& pair,
                                                    const std::vector<double>& log_scales,
                                                    double log_focal) const {
  const Eigen::Vector3d mi = scale_factors(log_scales[static_cast<std::size_t>(pair.i)], log_focal);
  const Eigen::Vector3d mj = scale_factors(log_scales[static_cast<std::size_t>(pair.j)], log_focal);
  align::AlignmentStats s = pair.stats;
  s.src_centroid = mj.cwiseProduct(pair.stats.src_centroid);
  s.dst_centroid = mi.cwiseProduct(pair.stats.dst_centroid);
  s.cross = mj.asDiagonal() * pair.stats.cross * mi.asDiagonal();
  s.src_var = mj.cwiseProduct(mj).dot(pair.src_axis_var);
  return s;
}

std::vector<const RefineObjective::PairTerm*> RefineObjective::adjacent_links() const {
  // One link per adjacent pair, preferring the dense pairing.
  std::vector<const PairTerm*> links(frames_ - 1, nullptr);
  for (const auto& pair : pairs_) {
    if (pair.j != pair.i + 1) continue;
    const PairTerm*& slot = links[static_cast<std::size_t>(pair.i)];
    if (slot == nullptr || (pair.dense && !slot->dense)) slot = &pair;
  }
  return links;
}

std::vector<double> RefineObjective::chain_initial_scales() const {
  const auto links = adjacent_links();
  std::vector<double> scales(frames_, 0.0);
  for (std::size_t t = 0; t + 1 < frames_; ++t) {
    scales[t + 1] = scales[t];
    if (links[t] == nullptr) continue;
    // The fitted scale maps frame t+1 onto frame t; compensating it keeps the
    // corrected clouds at a common scale along the chain.
    const double fitted = align::umeyama_similarity(links[t]->stats, true).scale;
    if (fitted > 0.0) scales[t + 1] += std::log(fitted);
  }
  return scales;
}

std::vector<PoseSE3> RefineObjective::solve_poses(const std::vector<double>& log_scales,
                                                  double log_focal) const {
  if (log_scales.size() != frames_) {
    std::ostringstream msg;
    msg << "got " << log_scales.size() << " log scales for " << frames_ << " frames";
    throw InputShapeError(msg.str());
  }
  const std::vector<const PairTerm*> links = adjacent_links();
  std::vector<PoseSE3> poses(frames_);
  poses[0] = PoseSE3::identity();
  for (std::size_t t = 0; t + 1 < frames_; ++t) {
    if (links[t] == nullptr) {
      std::ostringstream msg;
      msg << "no correspondences link frames " << t << " and " << t + 1;
      throw DegeneracyError(msg.str());
    }
    const PoseSE3 rel = align::weighted_procrustes(scaled_stats(*links[t], log_scales, log_focal));
    poses[t + 1] = poses[t].compose(rel);
  }
  return poses;
}

double RefineObjective::evaluate(const std::vector<double>& log_scales, double log_focal,
                                 const std::vector<PoseSE3>& poses) const {
  if (log_scales.size() != frames_ || poses.size() != frames_) {
    std::ostringstream msg;
    msg << "got " << log_scales.size() << " log scales and " << poses.size() << " poses for "
        << frames_ << " frames";
    throw InputShapeError(msg.str());
  }

  std::vector<double> spread(frames_, 0.0);
  for (std::size_t t = 0; t < frames_; ++t) {
    const Eigen::Vector3d m = scale_factors(log_scales[t], log_focal);
    spread[t] = align::principal_axis_from_covariance(m.asDiagonal() * base_cov_[t] *
                                                      m.asDiagonal())
                    .scale;
  }

  struct PairLoss {
    double photometric = 0.0;
    double shape = 0.0;
  };
  std::vector<PairLoss> slots(pairs_.size());
  parallel_for(pairs_.size(), [&](std::size_t p) {
    const PairTerm& pair = pairs_[p];
    const Eigen::Vector3d mi =
        scale_factors(log_scales[static_cast<std::size_t>(pair.i)], log_focal);
    const Eigen::Vector3d mj =
        scale_factors(log_scales[static_cast<std::size_t>(pair.j)], log_focal);
    const PoseSE3 t_ji =
        poses[static_cast<std::size_t>(pair.i)].inverse().compose(
            poses[static_cast<std::size_t>(pair.j)]);
    const core::SimTransform sim =
        align::umeyama_similarity(scaled_stats(pair, log_scales, log_focal), true);

    KahanSum photo, shape;
    for (std::size_t k = 0; k < pair.base.size(); ++k) {
      const Eigen::Vector3d a = mi.cwiseProduct(pair.base.a[k]);
      const Eigen::Vector3d b = mj.cwiseProduct(pair.base.b[k]);
      photo.add(pair.base.w[k] * (a - t_ji.apply(b)).norm());
      shape.add(pair.base.w[k] * (a - sim.apply(b)).norm());
    }
    const double denom = pair.stats.mass * spread[static_cast<std::size_t>(pair.j)];
    slots[p].photometric = photo.value() / denom;
    slots[p].shape = shape.value() / denom;
  });

  KahanSum flow_sum, track_sum, shape_sum;
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    (pairs_[p].dense ? flow_sum : track_sum).add(slots[p].photometric);
    shape_sum.add(slots[p].shape);
  }
  double total = weights_.shape * shape_sum.value() / static_cast<double>(pairs_.size());
  if (flow_pairs_ > 0) total += weights_.flow * flow_sum.value() / static_cast<double>(flow_pairs_);
  if (track_pairs_ > 0) {
    total += weights_.track * track_sum.value() / static_cast<double>(track_pairs_);
  }
  return total;
}

void RefineObjective::gradient(const std::vector<double>& log_scales, double log_focal,
                               const std::vector<PoseSE3>& poses, std::vector<double>* d_scales,
                               double* d_focal) const {
  if (log_scales.size() != frames_ || poses.size() != frames_) {
    std::ostringstream msg;
    msg << "got " << log_scales.size() << " log scales and " << poses.size() << " poses for "
        << frames_ << " frames";
    throw InputShapeError(msg.str());
  }

  // Spread and principal axis per frame; dF/ds_t = F, dF/df = -F (vx^2 + vy^2).
  std::vector<FrameSpread> spread(frames_);
  for (std::size_t t = 0; t < frames_; ++t) {
    const Eigen::Vector3d m = scale_factors(log_scales[t], log_focal);
    const align::PrincipalAxis pa =
        align::principal_axis_from_covariance(m.asDiagonal() * base_cov_[t] * m.asDiagonal());
    spread[t].value = pa.scale;
    spread[t].axis = pa.axis;
  }

  // Per-pair contributions: d(photometric + shape pair losses)/d(s_i, s_j, f),
  // already including the normalizer sensitivities but not the term weights.
  struct PairGrad {
    double photo_i = 0.0, photo_j = 0.0, photo_f = 0.0;
    double shape_i = 0.0, shape_j = 0.0, shape_f = 0.0;
  };
  std::vector<PairGrad> slots(pairs_.size());

  parallel_for(pairs_.size(), [&](std::size_t p) {
    const PairTerm& pair = pairs_[p];
    const std::size_t fi = static_cast<std::size_t>(pair.i);
    const std::size_t fj = static_cast<std::size_t>(pair.j);
    const Eigen::Vector3d mi = scale_factors(log_scales[fi], log_focal);
    const Eigen::Vector3d mj = scale_factors(log_scales[fj], log_focal);
    const PoseSE3 t_ji = poses[fi].inverse().compose(poses[fj]);
    const double f_j = spread[fj].value;
    const Eigen::Vector3d& axis_j = spread[fj].axis;
    const double df_f_over_f = -(axis_j.x() * axis_j.x() + axis_j.y() * axis_j.y());
    const double mass = pair.stats.mass;

    const align::AlignmentStats stats = scaled_stats(pair, log_scales, log_focal);
    const core::SimTransform sim = align::umeyama_similarity(stats, true);
    const Eigen::Matrix3d& h = stats.cross;
    const Eigen::Matrix3d& r_fit = sim.rotation;
    const double s_fit = sim.scale;
    const Eigen::Matrix3d p_mat = r_fit * h;
    const Eigen::Matrix3d p_sym = 0.5 * (p_mat + p_mat.transpose());

    // Sensitivities of the similarity fit along the three directions
    // theta in {s_i, s_j, f}: dh, d(src_var), d(centroids) feed the
    // first-order change of (scale, rotation, translation).
    const Eigen::Matrix3d dmat = kFocalDir.asDiagonal();
    const Eigen::Matrix3d dh_dirs[3] = {h, h, dmat * h + h * dmat};
    const double dvar_dirs[3] = {0.0, 2.0 * stats.src_var,
                                 -2.0 * mj.x() * mj.x() *
                                     (pair.src_axis_var.x() + pair.src_axis_var.y())};
    const Eigen::Vector3d dmu_s_dirs[3] = {Eigen::Vector3d::Zero(), stats.src_centroid,
                                           focal_dir(stats.src_centroid)};
    const Eigen::Vector3d dmu_d_dirs[3] = {stats.dst_centroid, Eigen::Vector3d::Zero(),
                                           focal_dir(stats.dst_centroid)};
    // dF_j / F_j along the three directions.
    const double df_over_f_dirs[3] = {0.0, 1.0, df_f_over_f};

    double ds_fit[3];
    Eigen::Matrix3d dr_fit[3];
    Eigen::Vector3d dt_fit[3];
    for (int d = 0; d < 3; ++d) {
      const Eigen::Matrix3d& dh = dh_dirs[d];
      ds_fit[d] = (r_fit * dh).trace() / stats.src_var - s_fit * dvar_dirs[d] / stats.src_var;
      const Eigen::Vector3d rhs = vee(dh.transpose() * r_fit.transpose() - r_fit * dh);
      dr_fit[d] = skew(solve_trace_complement(p_sym, rhs)) * r_fit;
      dt_fit[d] = dmu_d_dirs[d] - ds_fit[d] * (r_fit * stats.src_centroid) -
                  s_fit * (dr_fit[d] * stats.src_centroid) - s_fit * (r_fit * dmu_s_dirs[d]);
    }

    KahanSum photo_n, shape_n;
    KahanSum photo_dn[3], shape_dn[3];
    for (std::size_t k = 0; k < pair.base.size(); ++k) {
      const double w = pair.base.w[k];
      const Eigen::Vector3d a = mi.cwiseProduct(pair.base.a[k]);
      const Eigen::Vector3d b = mj.cwiseProduct(pair.base.b[k]);
      const Eigen::Vector3d da_dirs[3] = {a, Eigen::Vector3d::Zero(), focal_dir(a)};
      const Eigen::Vector3d db_dirs[3] = {Eigen::Vector3d::Zero(), b, focal_dir(b)};

      const Eigen::Vector3d r_photo = a - t_ji.apply(b);
      const double n_photo = r_photo.norm();
      photo_n.add(w * n_photo);
      if (n_photo > 0.0) {
        const Eigen::Vector3d rhat = r_photo / n_photo;
        for (int d = 0; d < 3; ++d) {
          photo_dn[d].add(w * rhat.dot(da_dirs[d] - t_ji.rotation * db_dirs[d]));
        }
      }

      const Eigen::Vector3d rb = r_fit * b;
      const Eigen::Vector3d r_shape = a - s_fit * rb - sim.translation;
      const double n_shape = r_shape.norm();
      shape_n.add(w * n_shape);
      if (n_shape > 0.0) {
        const Eigen::Vector3d rhat = r_shape / n_shape;
        for (int d = 0; d < 3; ++d) {
          const Eigen::Vector3d dr = da_dirs[d] - ds_fit[d] * rb - s_fit * (dr_fit[d] * b) -
                                     s_fit * (r_fit * db_dirs[d]) - dt_fit[d];
          shape_dn[d].add(w * rhat.dot(dr));
        }
      }
    }

    const double denom = mass * f_j;
    const double l_photo = photo_n.value() / denom;
    const double l_shape = shape_n.value() / denom;
    double photo_out[3];
    double shape_out[3];
    for (int d = 0; d < 3; ++d) {
      photo_out[d] = photo_dn[d].value() / denom - l_photo * df_over_f_dirs[d];
      shape_out[d] = shape_dn[d].value() / denom - l_shape * df_over_f_dirs[d];
    }
    slots[p] = {photo_out[0], photo_out[1], photo_out[2],
                shape_out[0], shape_out[1], shape_out[2]};
  });

  d_scales->assign(frames_, 0.0);
  *d_focal = 0.0;
  const double w_shape = weights_.shape / static_cast<double>(pairs_.size());
  std::vector<KahanSum> acc(frames_);
  KahanSum acc_focal;
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const PairTerm& pair = pairs_[p];
    const double w_photo = pair.dense ? weights_.flow / static_cast<double>(flow_pairs_)
                                      : weights_.track / static_cast<double>(track_pairs_);
    acc[static_cast<std::size_t>(pair.i)].add(w_photo * slots[p].photo_i +
                                              w_shape * slots[p].shape_i);
    acc[static_cast<std::size_t>(pair.j)].add(w_photo * slots[p].photo_j +
                                              w_shape * slots[p].shape_j);
    acc_focal.add(w_photo * slots[p].photo_f + w_shape * slots[p].shape_f);
  }
  for (std::size_t t = 0; t < frames_; ++t) (*d_scales)[t] = acc[t].value();
  *d_focal = acc_focal.value();
}

void RefineObjective::numeric_gradient(const std::vector<double>& log_scales, double log_focal,
                                       const std::vector<PoseSE3>& poses,
                                       std::vector<double>* d_scales, double* d_focal,
                                       double step) const {
  d_scales->assign(frames_, 0.0);
  std::vector<double> probe = log_scales;
  for (std::size_t t = 0; t < frames_; ++t) {
    probe[t] = log_scales[t] + step;
    const double hi = evaluate(probe, log_focal, poses);
    probe[t] = log_scales[t] - step;
    const double lo = evaluate(probe, log_focal, poses);
    probe[t] = log_scales[t];
    (*d_scales)[t] = (hi - lo) / (2.0 * step);
  }
  *d_focal = (evaluate(log_scales, log_focal + step, poses) -
              evaluate(log_scales, log_focal - step, poses)) /
             (2.0 * step);
}

RefineResult refine_scene(const loss::SceneLossData& data, const RefineParams& params) {
  params.validate();
  const RefineObjective objective(data, params.weights);
  const std::size_t n = objective.frame_count();

  RefineResult result;
  result.log_scales.assign(n, 0.0);
  result.log_focal = 0.0;
  result.poses = objective.solve_poses(result.log_scales, result.log_focal);
  double current = objective.evaluate(result.log_scales, result.log_focal, result.poses);

  if (params.max_iterations > 0) {
    try {
      std::vector<double> chained = objective.chain_initial_scales();
      std::vector<PoseSE3> chained_poses = objective.solve_poses(chained, 0.0);
      const double chained_loss = objective.evaluate(chained, 0.0, chained_poses);
      if (chained_loss < current) {
        result.log_scales = std::move(chained);
        result.poses = std::move(chained_poses);
        current = chained_loss;
      }
    } catch (const DegeneracyError&) {
      // keep the zero start when the chained scales break a link solve
    }
  }
  result.trace.push_back(current);

  std::vector<double> grad, prev_scales, prev_grad;
  double grad_focal = 0.0, prev_focal = 0.0, prev_grad_focal = 0.0;
  bool have_previous = false;
  double fallback_step = params.step;

  for (int iter = 0; iter < params.max_iterations; ++iter) {
    objective.gradient(result.log_scales, result.log_focal, result.poses, &grad, &grad_focal);
    grad[0] = 0.0;  // the anchor frame's scale fixes the global gauge
    if (!params.optimize_focal) grad_focal = 0.0;

    double grad_norm = std::abs(grad_focal);
    for (double g : grad) grad_norm = std::max(grad_norm, std::abs(g));
    if (grad_norm == 0.0) {
      result.converged = true;
      break;
    }

    // Barzilai-Borwein step length from the previous iterate and gradient;
    // backtracking below keeps the trace monotone regardless.
    double step0 = fallback_step;
    if (have_previous) {
      KahanSum sty_acc, yty_acc;
      const double dgf = grad_focal - prev_grad_focal;
      sty_acc.add((result.log_focal - prev_focal) * dgf);
      yty_acc.add(dgf * dgf);
      for (std::size_t t = 0; t < n; ++t) {
        const double dx = result.log_scales[t] - prev_scales[t];
        const double dg = grad[t] - prev_grad[t];
        sty_acc.add(dx * dg);
        yty_acc.add(dg * dg);
      }
      const double sty = sty_acc.value();
      const double yty = yty_acc.value();
      if (sty > 0.0 && yty > 0.0) step0 = std::clamp(sty / yty, 1e-12, 1e6);
    }
    prev_scales = result.log_scales;
    prev_focal = result.log_focal;
    prev_grad = grad;
    prev_grad_focal = grad_focal;
    have_previous = true;

    bool accepted = false;
    double trial = step0;
    for (int h = 0; h <= params.max_step_halvings; ++h, trial *= 0.5) {
      std::vector<double> cand_scales = result.log_scales;
      for (std::size_t t = 0; t < n; ++t) cand_scales[t] -= trial * grad[t];
      const double cand_focal = result.log_focal - trial * grad_focal;

      std::vector<PoseSE3> cand_poses;
      try {
        cand_poses = objective.solve_poses(cand_scales, cand_focal);
      } catch (const DegeneracyError&) {
        continue;  // overshoot broke a link solve; a shorter step may not
      }
      const double cand_loss = objective.evaluate(cand_scales, cand_focal, cand_poses);
      if (!std::isfinite(cand_loss) || cand_loss > current) continue;

      const double improvement = current - cand_loss;
      result.log_scales = std::move(cand_scales);
      result.log_focal = cand_focal;
      result.poses = std::move(cand_poses);
      result.trace.push_back(cand_loss);
      result.iterations = iter + 1;
      current = cand_loss;
      fallback_step = std::min(params.step, trial * 1.5);
      accepted = true;
      if (improvement <= params.relative_tolerance * std::max(current, 1e-300)) {
        result.converged = true;
      }
      break;
    }
    if (!accepted || result.converged) break;
  }
  return result;
}

}  // namespace mono4d::refine
