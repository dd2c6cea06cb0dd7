#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"
#include "mono4d/synth.hpp"

// Scene manifests: a JSON file listing every input of one video (depths,
// flows, dynamic masks, tracks, intrinsics, optional ground truth) plus the
// loader that turns it into in-memory inputs. Validation is total: a manifest
// that validates clean never produces a parse error later in the run, because
// validation parses everything it lists.

namespace mono4d::manifest {

/// File-level description of one scene's inputs. Relative paths resolve
/// against `root`, the directory holding the manifest file.
struct SceneManifest {
  std::string scene_id;
  int frame_count = 0;
  std::filesystem::path root;
  std::filesystem::path intrinsics_file;
  std::filesystem::path tracks_file;
  std::vector<std::filesystem::path> depth_files;         // one per frame
  std::vector<std::filesystem::path> flow_u_files;        // one per adjacent pair
  std::vector<std::filesystem::path> flow_v_files;
  std::vector<std::filesystem::path> dynamic_mask_files;  // one per frame
  std::vector<std::filesystem::path> gt_depth_files;      // empty or one per frame
  std::filesystem::path gt_poses_file;                    // empty when absent

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : root / p;
  }
  bool has_ground_truth() const {
    return !gt_depth_files.empty() && !gt_poses_file.empty();
  }
};

/// Parses manifest.json; `root` is set to the file's directory. Schema
/// problems raise ParseError with JSON-pointer-style paths; referenced files
/// are not opened here (that is validation's job).
SceneManifest read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const SceneManifest& manifest);

/// Opens and parses everything the manifest lists and returns every detected
/// problem: missing or unparsable files, count mismatches against
/// frame_count, raster dimensions disagreeing with the intrinsics, track and
/// pose spans disagreeing with the frame count. Empty means loadable.
std::vector<std::string> validate_manifest(const SceneManifest& manifest);

/// A scene's inputs in memory.
struct SceneData {
  core::CameraIntrinsics intrinsics;
  std::vector<core::DepthMap> depths;
  std::vector<corr::FlowField> flows;
  std::vector<corr::ConfidenceMask> dynamic_masks;  // 1 = moving object
  /// Derived confidence: (1 - dynamic) * flying-pixel mask of the depth.
  std::vector<corr::ConfidenceMask> confidence;
  corr::TrackSet tracks;
  std::vector<core::DepthMap> gt_depths;     // empty when the manifest has no gt
  std::vector<core::PoseSE3> gt_poses;       // empty when the manifest has no gt
};

/// Validates, then loads. Throws ValidationError carrying the full problem
/// list when validation fails.
SceneData load_scene(const SceneManifest& manifest);

/// Writes a complete scene directory: depth_{t:05}.pfm,
/// flow_{i:05}_{j:05}.{u,v}.pfm, dynamic_{t:05}.pgm, intrinsics.json,
/// tracks.json, gt_poses.json, and manifest.json. Ground-truth depths alias
/// the input depth files (they are exact here). Returns the manifest path.
std::filesystem::path write_synthetic_scene(const std::filesystem::path& dir,
                                            const synth::OracleScene& scene,
                                            const std::string& scene_id);

}  // namespace mono4d::manifest
