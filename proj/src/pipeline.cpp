#include "mono4d/pipeline.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "mono4d/errors.hpp"
#include "mono4d/io.hpp"
#include "mono4d/loss.hpp"

namespace mono4d::pipeline {

namespace {

std::string categorize(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const InputShapeError*>(&e)) return "shape";
  if (dynamic_cast<const DegeneracyError*>(&e)) return "degeneracy";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  return "internal";
}

/// One window reconstructed and, when asked, refined. depth_scales holds the
/// per-frame factor already folded into the window's clouds; focal_scale is
/// the shared focal correction (1 unless this window was allowed to fit it).
struct WindowBuild {
  core::CloudSequence sequence;
  std::vector<double> depth_scales;
  double focal_scale = 1.0;
};

WindowBuild build_window(const std::vector<core::DepthMap>& depths,
                         const core::CameraIntrinsics& intrinsics,
                         const std::vector<corr::FlowField>& flows,
                         const std::vector<corr::ConfidenceMask>& masks,
                         const StreamParams& params, bool allow_focal, WindowTrace* trace) {
  WindowBuild built;
  built.depth_scales.assign(depths.size(), 1.0);
  if (!params.refine) {
    built.sequence = reconstruct_window(depths, intrinsics, flows, masks);
    return built;
  }

  loss::SceneLossData data;
  data.clouds.reserve(depths.size());
  for (const auto& d : depths) data.clouds.push_back(core::unproject(d, intrinsics));
  data.flows = flows;
  data.masks = masks;

  refine::RefineParams refine_params = params.refine_params;
  refine_params.optimize_focal = refine_params.optimize_focal && allow_focal;
  const refine::RefineResult result = refine::refine_scene(data, refine_params);

  built.focal_scale = std::exp(result.log_focal);
  core::CameraIntrinsics corrected = intrinsics;
  corrected.fx *= built.focal_scale;
  corrected.fy *= built.focal_scale;

  std::vector<core::FrameCloud> refined(data.clouds.size());
  for (std::size_t t = 0; t < data.clouds.size(); ++t) {
    const double depth_scale = std::exp(result.log_scales[t]);
    built.depth_scales[t] = depth_scale;
    const Eigen::Vector3d factors(depth_scale / built.focal_scale,
                                  depth_scale / built.focal_scale, depth_scale);
    core::FrameCloud& cloud = refined[t];
    cloud = data.clouds[t];
    for (std::size_t k = 0; k < cloud.size(); ++k) {
      if (cloud.valid[k]) cloud.points[k] = factors.cwiseProduct(cloud.points[k]);
    }
  }
  built.sequence = core::assemble_global(refined, result.poses, corrected);

  if (trace) {
    trace->refine_iterations = result.iterations;
    trace->loss_before = result.trace.front();
    trace->loss_after = result.trace.back();
  }
  return built;
}

}  // namespace

void WindowConfig::validate() const {
  std::ostringstream msg;
  if (window_size < 2) {
    msg << "window size must be at least 2 frames, got " << window_size;
    throw InputShapeError(msg.str());
  }
  if (overlap < 1 || overlap >= window_size) {
    msg << "overlap must lie in [1, window size), got overlap " << overlap << " for window size "
        << window_size;
    throw InputShapeError(msg.str());
  }
}

void SceneInputs::validate() const {
  intrinsics.validate();
  std::ostringstream msg;
  if (depths.empty()) throw InputShapeError("scene has no frames");
  if (flows.size() + 1 != depths.size()) {
    msg << "scene with " << depths.size() << " frames needs " << depths.size() - 1
        << " flow fields, got " << flows.size();
    throw InputShapeError(msg.str());
  }
  if (confidence.size() != depths.size()) {
    msg << "scene with " << depths.size() << " frames needs as many confidence masks, got "
        << confidence.size();
    throw InputShapeError(msg.str());
  }
}

SceneInputs inputs_from_scene(const manifest::SceneData& data) {
  SceneInputs inputs;
  inputs.intrinsics = data.intrinsics;
  inputs.depths = data.depths;
  inputs.flows = data.flows;
  inputs.confidence = data.confidence;
  inputs.validate();
  return inputs;
}

InMemorySource::InMemorySource(SceneInputs inputs) : inputs_(std::move(inputs)) {
  inputs_.validate();
}

corr::ConfidenceMask InMemorySource::confidence(std::size_t t) const {
  return inputs_.confidence.at(t);
}

ManifestSource::ManifestSource(manifest::SceneManifest m) : manifest_(std::move(m)) {
  const std::vector<std::string> problems = manifest::validate_manifest(manifest_);
  if (!problems.empty()) {
    throw ValidationError("scene '" + manifest_.scene_id + "' failed validation with " +
                              std::to_string(problems.size()) + " problem(s)",
                          problems);
  }
  intrinsics_ = io::read_intrinsics_json(manifest_.resolve(manifest_.intrinsics_file));
}

std::size_t ManifestSource::frame_count() const { return manifest_.frame_count; }

core::DepthMap ManifestSource::depth(std::size_t t) const {
  return io::read_depth_pfm(manifest_.resolve(manifest_.depth_files.at(t)));
}

corr::FlowField ManifestSource::flow(std::size_t t) const {
  return io::read_flow_pfm(manifest_.resolve(manifest_.flow_u_files.at(t)),
                           manifest_.resolve(manifest_.flow_v_files.at(t)));
}

corr::ConfidenceMask ManifestSource::confidence(std::size_t t) const {
  const corr::ConfidenceMask dynamic =
      io::read_mask(manifest_.resolve(manifest_.dynamic_mask_files.at(t)));
  const corr::ConfidenceMask edges =
      corr::flying_pixel_mask(depth(t), corr::kFlyingPixelRelThreshold);
  return corr::compose_pseudo_mask(dynamic, edges);
}

core::CloudSequence reconstruct_window(const std::vector<core::DepthMap>& depths,
                                       const core::CameraIntrinsics& intrinsics,
                                       const std::vector<corr::FlowField>& flows,
                                       const std::vector<corr::ConfidenceMask>& masks) {
  std::ostringstream msg;
  if (depths.size() < 2) {
    msg << "a reconstruction window needs at least 2 frames, got " << depths.size();
    throw InputShapeError(msg.str());
  }
  if (flows.size() + 1 != depths.size()) {
    msg << "window of " << depths.size() << " frames needs " << depths.size() - 1
        << " flow fields, got " << flows.size();
    throw InputShapeError(msg.str());
  }
  if (masks.size() != depths.size()) {
    msg << "window of " << depths.size() << " frames needs as many masks, got " << masks.size();
    throw InputShapeError(msg.str());
  }
  std::vector<core::FrameCloud> clouds;
  clouds.reserve(depths.size());
  for (const auto& d : depths) clouds.push_back(core::unproject(d, intrinsics));
  const std::vector<core::PoseSE3> poses = refine::solve_window_poses(clouds, flows, masks);
  return core::assemble_global(clouds, poses, intrinsics);
}

align::SimTransform stitch_transform(const core::CloudSequence& prev,
                                     const core::CloudSequence& next, std::size_t overlap) {
  std::ostringstream msg;
  if (overlap == 0) throw InputShapeError("stitch overlap must cover at least one frame");
  if (prev.frames.size() < overlap || next.frames.size() < overlap) {
    msg << "stitch overlap of " << overlap << " frames exceeds the sequences (" << prev.frames.size()
        << " and " << next.frames.size() << " frames)";
    throw InputShapeError(msg.str());
  }
  align::CorrespondenceSet corr;
  const std::size_t base = prev.frames.size() - overlap;
  for (std::size_t k = 0; k < overlap; ++k) {
    const core::FrameCloud& a = prev.frames[base + k];
    const core::FrameCloud& b = next.frames[k];
    if (a.height != b.height || a.width != b.width) {
      msg << "overlap frame " << k << " resolution mismatch: " << a.height << "x" << a.width
          << " vs " << b.height << "x" << b.width;
      throw InputShapeError(msg.str());
    }
    for (std::size_t px = 0; px < a.size(); ++px) {
      if (a.valid[px] && b.valid[px]) corr.add(b.points[px], a.points[px], 1.0);
    }
  }
  try {
    return align::umeyama_similarity(corr, true);
  } catch (const DegeneracyError& e) {
    throw DegeneracyError(std::string("stitch overlap alignment: ") + e.what());
  }
}

core::CloudSequence stitch(const core::CloudSequence& prev, const core::CloudSequence& next,
                           std::size_t overlap, align::SimTransform* transform_out) {
  if (next.frames.size() <= overlap) {
    std::ostringstream msg;
    msg << "stitch has nothing to append: " << next.frames.size()
        << " incoming frames, overlap " << overlap;
    throw InputShapeError(msg.str());
  }
  if (prev.frames.size() != prev.poses.size() || next.frames.size() != next.poses.size()) {
    throw InputShapeError("stitch inputs must carry one pose per frame");
  }
  const align::SimTransform g = stitch_transform(prev, next, overlap);

  core::CloudSequence out = prev;
  out.frames.reserve(prev.frames.size() + next.frames.size() - overlap);
  out.poses.reserve(out.frames.capacity());
  for (std::size_t f = overlap; f < next.frames.size(); ++f) {
    core::FrameCloud mapped = next.frames[f];
    for (std::size_t px = 0; px < mapped.size(); ++px) {
      if (mapped.valid[px]) mapped.points[px] = g.apply(mapped.points[px]);
    }
    out.frames.push_back(std::move(mapped));
    core::PoseSE3 pose;
    pose.rotation = g.rotation * next.poses[f].rotation;
    pose.translation = g.scale * (g.rotation * next.poses[f].translation) + g.translation;
    out.poses.push_back(pose);
  }
  if (transform_out) *transform_out = g;
  return out;
}

StreamResult reconstruct_stream(const SceneSource& source, const StreamParams& params) {
  params.window.validate();
  if (params.refine) params.refine_params.validate();
  const std::size_t total = source.frame_count();
  const std::size_t window_size = params.window.window_size;
  if (total < window_size) {
    std::ostringstream msg;
    msg << "scene has " << total << " frames but the window needs " << window_size;
    throw InputShapeError(msg.str());
  }

  // Window start offsets: advance by window_size - overlap, with the final
  // window pulled back so it ends exactly at the last frame.
  std::vector<std::size_t> starts{0};
  const std::size_t advance = window_size - params.window.overlap;
  while (starts.back() + window_size < total) {
    starts.push_back(std::min(starts.back() + advance, total - window_size));
  }

  StreamResult out;
  core::CameraIntrinsics scene_intrinsics = source.intrinsics();
  std::size_t emitted = 0;
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const std::size_t start = starts[w];
    try {
      std::vector<core::DepthMap> depths;
      std::vector<corr::FlowField> flows;
      std::vector<corr::ConfidenceMask> masks;
      depths.reserve(window_size);
      flows.reserve(window_size - 1);
      masks.reserve(window_size);
      for (std::size_t t = start; t < start + window_size; ++t) {
        depths.push_back(source.depth(t));
        masks.push_back(source.confidence(t));
        if (t + 1 < start + window_size) flows.push_back(source.flow(t));
      }

      WindowTrace trace;
      trace.index = w;
      trace.start = start;
      trace.frames = window_size;
      WindowBuild built =
          build_window(depths, scene_intrinsics, flows, masks, params, w == 0, &trace);

      if (w == 0) {
        scene_intrinsics = built.sequence.intrinsics;  // focal-corrected when refining
        out.sequence = std::move(built.sequence);
        out.depth_scales = built.depth_scales;
        emitted = window_size;
      } else {
        const std::size_t joint = emitted - start;  // >= overlap; larger after a clamped advance
        align::SimTransform g;
        out.sequence = stitch(out.sequence, built.sequence, joint, &g);
        for (std::size_t f = joint; f < window_size; ++f) {
          out.depth_scales.push_back(g.scale * built.depth_scales[f]);
        }
        emitted = start + window_size;
        trace.stitch_scale = g.scale;
      }
      if (params.on_window) params.on_window(trace);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "window " << w << " (frames " << start << ".." << start + window_size - 1
          << "): " << e.what();
      out.error = msg.str();
      out.error_category = categorize(e);
      out.failed_window = w;
      return out;
    }
  }
  out.complete = true;
  return out;
}

StreamResult reconstruct_stream(const SceneInputs& inputs, const StreamParams& params) {
  return reconstruct_stream(InMemorySource(inputs), params);
}

}  // namespace mono4d::pipeline
