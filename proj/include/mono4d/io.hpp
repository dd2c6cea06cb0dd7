#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mono4d/core.hpp"
#include "mono4d/corr.hpp"

// File formats. Rasters travel as PFM (single-channel float32, negative scale
// = little-endian, bottom row first) and PGM (8-bit, 255 = confidence 1.0);
// geometry sidecars as JSON; pointcloud exports as binary little-endian PLY.
// All writers are deterministic: identical inputs give byte-identical files.

namespace mono4d::io {

/// Single-channel float32 raster with row 0 at the top (PFM stores rows
/// bottom-up; readers and writers do the flip).
struct FloatRaster {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  FloatRaster() = default;
  FloatRaster(int h, int w) : height(h), width(w), values(std::size_t(h) * w, 0.0f) {}

  std::size_t size() const { return values.size(); }
  std::size_t index(int r, int c) const { return std::size_t(r) * width + c; }
  float at(int r, int c) const { return values[index(r, c)]; }
};

/// Reads a single-channel PFM file. Accepts both endiannesses (the scale
/// field's sign); throws ParseError naming the file and byte offset on
/// malformed headers or truncated payloads.
FloatRaster read_pfm(const std::filesystem::path& file);

/// Writes a PFM with scale -1.0 (little-endian). Bit-exact round trip:
/// read_pfm(write_pfm(r)) reproduces every float including NaN payloads.
void write_pfm(const std::filesystem::path& file, const FloatRaster& raster);

/// DepthMap <-> PFM. Invalid pixels serialize as quiet NaN; reading treats
/// non-finite and non-positive entries as invalid.
core::DepthMap read_depth_pfm(const std::filesystem::path& file);
void write_depth_pfm(const std::filesystem::path& file, const core::DepthMap& depth);

/// Flow <-> a pair of PFM files (du and dv as separate single-channel
/// rasters). Invalid flow pixels serialize as NaN in both channels; a pixel
/// non-finite in either channel reads back invalid.
corr::FlowField read_flow_pfm(const std::filesystem::path& u_file,
                              const std::filesystem::path& v_file);
void write_flow_pfm(const std::filesystem::path& u_file, const std::filesystem::path& v_file,
                    const corr::FlowField& flow);

/// Confidence mask from PGM (value / maxval) or PFM, dispatched on the file
/// extension. PGM must be binary (P5) with maxval in [1, 255].
corr::ConfidenceMask read_mask(const std::filesystem::path& file);

/// Writes a confidence mask as binary PGM with maxval 255, rounding each
/// value to the nearest byte. Exact for 0/1 binary masks.
void write_mask_pgm(const std::filesystem::path& file, const corr::ConfidenceMask& mask);

enum class PlyColor {
  kHeight,      // blue-to-red ramp over the sequence's world-y range
  kFrameIndex,  // fixed palette cycled by frame
};

struct PlyOptions {
  bool merged = true;  // one file with every frame; else one file per frame
  PlyColor color = PlyColor::kHeight;
};

/// Writes binary little-endian PLY (float32 xyz + u8 rgb), omitting invalid
/// points; the header vertex count matches the emitted records exactly.
/// Merged mode writes `target` itself; per-frame mode treats `target` as a
/// directory and writes frame_{t:05}.ply inside it. Returns the written paths.
std::vector<std::filesystem::path> write_ply(const std::filesystem::path& target,
                                             const core::CloudSequence& seq,
                                             const PlyOptions& options = {});

/// Intrinsics as {"fx","fy","cx","cy","width","height"}.
core::CameraIntrinsics read_intrinsics_json(const std::filesystem::path& file);
void write_intrinsics_json(const std::filesystem::path& file,
                           const core::CameraIntrinsics& intrinsics);

/// Poses as {"convention":"camera_to_world","poses":[{"rotation":[9 row-major],
/// "translation":[3]},...]}. Any other convention string is rejected; there is
/// no silent inversion. Schema errors carry JSON-pointer-style paths.
std::vector<core::PoseSE3> read_poses_json(const std::filesystem::path& file);
void write_poses_json(const std::filesystem::path& file,
                      const std::vector<core::PoseSE3>& poses);

/// Tracks as {"num_tracks","num_frames","query_frame","positions" (flat
/// track-major [u,v] pairs),"visibility" (flat 0/1)}.
corr::TrackSet read_tracks_json(const std::filesystem::path& file);
void write_tracks_json(const std::filesystem::path& file, const corr::TrackSet& tracks);

}  // namespace mono4d::io
