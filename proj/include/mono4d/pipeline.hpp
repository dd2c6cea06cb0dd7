#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mono4d/align.hpp"
#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"
#include "mono4d/manifest.hpp"
#include "mono4d/refine.hpp"

// Windowed reconstruction of arbitrarily long sequences. Each fixed-size
// window is reconstructed on its own (unproject, closed-form pose chain,
// optional per-window refinement), then consecutive windows are joined by a
// scaled rigid transform fitted over their overlapping frames. The first
// window anchors the global coordinate frame; earlier output is never
// revisited, so frames are final as soon as their window is stitched.

namespace mono4d::pipeline {

struct WindowConfig {
  std::size_t window_size = 4;
  std::size_t overlap = 1;

  /// Throws InputShapeError unless window_size >= 2 and 1 <= overlap < window_size.
  void validate() const;
};

/// Frame-indexed access to one scene's inputs. depth(t) and confidence(t)
/// cover t in [0, frame_count()); flow(t) is the t -> t+1 field for
/// t in [0, frame_count() - 1).
class SceneSource {
 public:
  virtual ~SceneSource() = default;
  virtual std::size_t frame_count() const = 0;
  virtual core::CameraIntrinsics intrinsics() const = 0;
  virtual core::DepthMap depth(std::size_t t) const = 0;
  virtual corr::FlowField flow(std::size_t t) const = 0;
  virtual corr::ConfidenceMask confidence(std::size_t t) const = 0;
};

/// A scene held entirely in memory.
struct SceneInputs {
  core::CameraIntrinsics intrinsics;
  std::vector<core::DepthMap> depths;
  std::vector<corr::FlowField> flows;            // t -> t+1
  std::vector<corr::ConfidenceMask> confidence;  // correspondence weights, 1 = trusted

  std::size_t frame_count() const { return depths.size(); }
  void validate() const;
};

/// Adopts a loaded scene's depths, flows, and derived confidence masks.
SceneInputs inputs_from_scene(const manifest::SceneData& data);

class InMemorySource final : public SceneSource {
 public:
  explicit InMemorySource(SceneInputs inputs);
  std::size_t frame_count() const override { return inputs_.frame_count(); }
  core::CameraIntrinsics intrinsics() const override { return inputs_.intrinsics; }
  core::DepthMap depth(std::size_t t) const override { return inputs_.depths.at(t); }
  corr::FlowField flow(std::size_t t) const override { return inputs_.flows.at(t); }
  corr::ConfidenceMask confidence(std::size_t t) const override;

 private:
  SceneInputs inputs_;
};

/// Reads frames from manifest-listed files on demand, so memory stays
/// proportional to the window size rather than the clip length. The
/// constructor validates the whole manifest up front (throwing
/// ValidationError with the full problem list), which makes later per-frame
/// reads parse-error free.
class ManifestSource final : public SceneSource {
 public:
  explicit ManifestSource(manifest::SceneManifest m);
  std::size_t frame_count() const override;
  core::CameraIntrinsics intrinsics() const override { return intrinsics_; }
  core::DepthMap depth(std::size_t t) const override;
  corr::FlowField flow(std::size_t t) const override;
  corr::ConfidenceMask confidence(std::size_t t) const override;

 private:
  manifest::SceneManifest manifest_;
  core::CameraIntrinsics intrinsics_;
};

/// Reconstructs one window: unprojects every depth, solves the frame-to-frame
/// pose chain from flow correspondences, and assembles all frames in the
/// window's first camera frame. Requires at least two frames, flows.size() ==
/// depths.size() - 1, and masks.size() == depths.size().
core::CloudSequence reconstruct_window(const std::vector<core::DepthMap>& depths,
                                       const core::CameraIntrinsics& intrinsics,
                                       const std::vector<corr::FlowField>& flows,
                                       const std::vector<corr::ConfidenceMask>& masks);

/// Scaled rigid transform mapping next's coordinates into prev's, fitted by
/// least squares over every jointly-valid pixel of the overlapping frames:
/// prev's last `overlap` frames against next's first `overlap` frames.
/// Throws InputShapeError on count or resolution mismatches and
/// DegeneracyError when the overlap carries too little support.
align::SimTransform stitch_transform(const core::CloudSequence& prev,
                                     const core::CloudSequence& next,
                                     std::size_t overlap);

/// Joins two window reconstructions: prev's frames are kept bit-for-bit,
/// next's frames past the overlap are mapped through stitch_transform and
/// appended. Appended poses fold the transform in so that each emitted frame
/// still equals pose(unproject(scale * depth)): rotation R_G * R_t,
/// translation s * R_G * t_t + T_G, with the scale s surfaced through
/// `scale_out` for the caller's depth bookkeeping.
core::CloudSequence stitch(const core::CloudSequence& prev, const core::CloudSequence& next,
                           std::size_t overlap, align::SimTransform* transform_out = nullptr);

/// Per-window progress for verbose streaming output.
struct WindowTrace {
  std::size_t index = 0;        // window number, 0-based
  std::size_t start = 0;        // first frame of the window
  std::size_t frames = 0;       // window size after clamping (== window_size)
  double stitch_scale = 1.0;    // 1 for the first window
  int refine_iterations = 0;    // 0 when refinement is off
  double loss_before = 0.0;     // refinement trace endpoints, 0 when off
  double loss_after = 0.0;
};

struct StreamParams {
  WindowConfig window;
  bool refine = false;
  refine::RefineParams refine_params;
  /// Called after each window is stitched into the output.
  std::function<void(const WindowTrace&)> on_window;
};

struct StreamResult {
  /// Frames emitted so far, expressed in the first window's frame 0.
  core::CloudSequence sequence;
  /// Per emitted frame: sequence.frames[t] equals
  /// transform(unproject(depth_scales[t] * depth_t, sequence.intrinsics),
  ///           sequence.poses[t]).
  std::vector<double> depth_scales;
  bool complete = false;
  std::string error;           // failure description when !complete
  std::string error_category;  // degeneracy | shape | numeric | io | parse | validation
  std::size_t failed_window = 0;
};

/// Slides a window of window_size frames forward by window_size - overlap,
/// reconstructing and stitching as it goes; the final window is pulled back
/// so it ends exactly at the last frame. With refinement enabled, each
/// window's per-frame depth scales (and, for the first window only, the
/// shared focal correction) are re-estimated before assembly; the corrected
/// intrinsics from the first window serve the whole scene. Any window or
/// stitch failure stops the stream: output up to the previous window is
/// retained and the failure is described in the result rather than thrown.
/// Requires frame_count() >= window_size.
StreamResult reconstruct_stream(const SceneSource& source, const StreamParams& params = {});
StreamResult reconstruct_stream(const SceneInputs& inputs, const StreamParams& params = {});

}  // namespace mono4d::pipeline
