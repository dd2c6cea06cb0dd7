#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mono4d/core.hpp"
#include "mono4d/errors.hpp"
#include "mono4d/io.hpp"
#include "mono4d/manifest.hpp"
#include "mono4d/synth.hpp"

using namespace mono4d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  TempDir(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::vector<char> read_bytes(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& file, const std::string& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(out));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t float_bits(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  return u;
}

/// Deliberately independent PLY parser: text header line by line, then raw
/// little-endian records. Shares no code with the writer.
struct MiniPly {
  std::size_t vertex_count = 0;
  std::vector<std::array<float, 3>> xyz;
  std::vector<std::array<std::uint8_t, 3>> rgb;

  explicit MiniPly(const fs::path& file) {
    const std::vector<char> bytes = read_bytes(file);
    std::size_t pos = 0;
    auto next_line = [&]() {
      std::string line;
      while (pos < bytes.size() && bytes[pos] != '\n') line.push_back(bytes[pos++]);
      REQUIRE(pos < bytes.size());  // header lines all end in newline
      ++pos;
      return line;
    };
    REQUIRE(next_line() == "ply");
    REQUIRE(next_line() == "format binary_little_endian 1.0");
    std::vector<std::string> properties;
    for (std::string line = next_line(); line != "end_header"; line = next_line()) {
      if (line.rfind("comment", 0) == 0) continue;
      if (line.rfind("element vertex ", 0) == 0) {
        vertex_count = std::stoul(line.substr(15));
        continue;
      }
      if (line.rfind("property ", 0) == 0) {
        properties.push_back(line);
        continue;
      }
      FAIL("unexpected header line: " << line);
    }
    REQUIRE(properties == std::vector<std::string>{
                              "property float x", "property float y", "property float z",
                              "property uchar red", "property uchar green",
                              "property uchar blue"});
    REQUIRE(bytes.size() - pos == vertex_count * 15);
    for (std::size_t k = 0; k < vertex_count; ++k) {
      std::array<float, 3> p;
      std::memcpy(p.data(), bytes.data() + pos, 12);
      pos += 12;
      std::array<std::uint8_t, 3> c;
      std::memcpy(c.data(), bytes.data() + pos, 3);
      pos += 3;
      xyz.push_back(p);
      rgb.push_back(c);
    }
  }
};

}  // namespace

TEST_CASE("PFM round trip is bit-exact including NaN payloads") {
  TempDir dir("mono4d_io_pfm_roundtrip");
  io::FloatRaster raster(7, 11);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> uni(-1000.0f, 1000.0f);
  for (auto& v : raster.values) v = uni(rng);
  raster.values[3] = 0.0f;
  raster.values[4] = -0.0f;
  // A specific quiet-NaN payload must survive untouched.
  const std::uint32_t nan_bits = 0x7fc00abcu;
  std::memcpy(&raster.values[5], &nan_bits, 4);

  const fs::path file = dir.path / "raster.pfm";
  io::write_pfm(file, raster);
  const io::FloatRaster back = io::read_pfm(file);
  REQUIRE(back.height == 7);
  REQUIRE(back.width == 11);
  for (std::size_t k = 0; k < raster.values.size(); ++k) {
    CHECK(float_bits(back.values[k]) == float_bits(raster.values[k]));
  }

  // Writing the identical raster twice gives byte-identical files.
  const fs::path file2 = dir.path / "raster2.pfm";
  io::write_pfm(file2, raster);
  CHECK(read_bytes(file) == read_bytes(file2));
}

TEST_CASE("PFM reader accepts the big-endian scale convention") {
  TempDir dir("mono4d_io_pfm_bigendian");
  const fs::path file = dir.path / "big.pfm";
  const float value = 37.5f;
  std::uint32_t bits = float_bits(value);
  bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) |
         ((bits >> 24) & 0xffu);
  std::string payload(4, '\0');
  std::memcpy(payload.data(), &bits, 4);
  write_bytes(file, "Pf\n1 1\n1.0\n" + payload);
  const io::FloatRaster raster = io::read_pfm(file);
  CHECK(raster.values[0] == value);
}

TEST_CASE("malformed PFM files fail with the file name and byte offset") {
  TempDir dir("mono4d_io_pfm_errors");
  auto expect_parse_error = [&](const std::string& name, const std::string& content,
                                const std::string& needle) {
    const fs::path file = dir.path / name;
    write_bytes(file, content);
    try {
      io::read_pfm(file);
      FAIL("expected ParseError for " << name);
    } catch (const ParseError& e) {
      const std::string what = e.what();
      CAPTURE(what);
      CHECK(what.find(file.string()) != std::string::npos);
      CHECK(what.find("byte") != std::string::npos);
      CHECK(what.find(needle) != std::string::npos);
    }
  };

  expect_parse_error("color.pfm", "PF\n2 2\n-1.0\n" + std::string(48, 'x'), "single-channel");
  expect_parse_error("magic.pfm", "Qx\n2 2\n-1.0\n" + std::string(16, 'x'), "bad magic");
  expect_parse_error("width.pfm", "Pf\nabc 2\n-1.0\n", "width");
  expect_parse_error("scale.pfm", "Pf\n2 2\n0\n" + std::string(16, 'x'), "scale");
  expect_parse_error("short.pfm", "Pf\n4 4\n-1.0\n" + std::string(10, 'x'),
                     "truncated pixel payload: expected 64 bytes, found 10");
  expect_parse_error("empty.pfm", "", "unexpected end of header");
  CHECK_THROWS_AS(io::read_pfm(dir.path / "does_not_exist.pfm"), IoError);
}

TEST_CASE("depth PFM carries validity through NaN") {
  TempDir dir("mono4d_io_depth");
  core::DepthMap depth(3, 4);
  for (std::size_t k = 0; k < depth.size(); ++k) {
    depth.values[k] = 0.5 + 0.25 * static_cast<double>(k);
    depth.valid[k] = 1;
  }
  depth.valid[5] = 0;
  depth.values[5] = 0.0;

  const fs::path file = dir.path / "depth.pfm";
  io::write_depth_pfm(file, depth);
  const core::DepthMap back = io::read_depth_pfm(file);
  REQUIRE(back.height == 3);
  REQUIRE(back.width == 4);
  for (std::size_t k = 0; k < depth.size(); ++k) {
    CHECK(back.valid[k] == depth.valid[k]);
    if (depth.valid[k]) {
      CHECK(back.values[k] == static_cast<double>(static_cast<float>(depth.values[k])));
    }
  }
}

TEST_CASE("PGM masks: 255 is 1.0, 0 is 0.0, maxval rescales, comments parse") {
  TempDir dir("mono4d_io_pgm");
  corr::ConfidenceMask mask(2, 3);
  mask.values = {0.0, 1.0, 0.5, 0.25, 1.0, 0.0};
  const fs::path file = dir.path / "mask.pgm";
  io::write_mask_pgm(file, mask);
  const corr::ConfidenceMask back = io::read_mask(file);
  CHECK(back.values[0] == 0.0);
  CHECK(back.values[1] == 1.0);
  CHECK(back.values[2] == doctest::Approx(0.5).epsilon(0.01));
  CHECK(back.values[5] == 0.0);

  const fs::path commented = dir.path / "commented.pgm";
  write_bytes(commented, "P5\n# a comment\n2 1\n# another\n100\n" + std::string("\x64\x32", 2));
  const corr::ConfidenceMask scaled = io::read_mask(commented);
  CHECK(scaled.values[0] == 1.0);
  CHECK(scaled.values[1] == 0.5);

  const fs::path big_maxval = dir.path / "big.pgm";
  write_bytes(big_maxval, "P5\n2 1\n300\nxx");
  CHECK_THROWS_AS(io::read_mask(big_maxval), ParseError);
  const fs::path truncated = dir.path / "short.pgm";
  write_bytes(truncated, "P5\n4 4\n255\nxxx");
  CHECK_THROWS_AS(io::read_mask(truncated), ParseError);
  CHECK_THROWS_AS(io::read_mask(dir.path / "mask.tiff"), ParseError);
}

TEST_CASE("flow PFM pairs round trip validity and values") {
  TempDir dir("mono4d_io_flow");
  corr::FlowField flow(4, 5);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-30.0, 30.0);
  for (std::size_t k = 0; k < flow.size(); ++k) {
    flow.du[k] = uni(rng);
    flow.dv[k] = uni(rng);
    flow.valid[k] = (k % 3 == 0) ? 0 : 1;
  }
  const fs::path u_file = dir.path / "flow.u.pfm";
  const fs::path v_file = dir.path / "flow.v.pfm";
  io::write_flow_pfm(u_file, v_file, flow);
  const corr::FlowField back = io::read_flow_pfm(u_file, v_file);
  for (std::size_t k = 0; k < flow.size(); ++k) {
    CHECK(back.valid[k] == flow.valid[k]);
    if (flow.valid[k]) {
      CHECK(back.du[k] == static_cast<double>(static_cast<float>(flow.du[k])));
      CHECK(back.dv[k] == static_cast<double>(static_cast<float>(flow.dv[k])));
    }
  }

  io::FloatRaster other(2, 2);
  io::write_pfm(dir.path / "small.pfm", other);
  CHECK_THROWS_AS(io::read_flow_pfm(u_file, dir.path / "small.pfm"), ParseError);
}

TEST_CASE("PLY export: exact vertex counts, parseable by an independent reader") {
  TempDir dir("mono4d_io_ply");

  core::CloudSequence tiny;
  tiny.frames.emplace_back(1, 2);
  tiny.frames[0].points[0] = Eigen::Vector3d(0.25, -1.5, 2.0);
  tiny.frames[0].valid[0] = 1;  // second pixel stays invalid
  tiny.poses.push_back(core::PoseSE3::identity());
  const fs::path one = dir.path / "one.ply";
  io::write_ply(one, tiny);
  const MiniPly parsed_one(one);
  REQUIRE(parsed_one.vertex_count == 1);
  CHECK(parsed_one.xyz[0][0] == 0.25f);
  CHECK(parsed_one.xyz[0][1] == -1.5f);
  CHECK(parsed_one.xyz[0][2] == 2.0f);

  core::CloudSequence empty_seq;
  empty_seq.frames.emplace_back(2, 2);  // no valid points at all
  empty_seq.poses.push_back(core::PoseSE3::identity());
  const fs::path none = dir.path / "none.ply";
  io::write_ply(none, empty_seq);
  CHECK(MiniPly(none).vertex_count == 0);

  // Oracle scene, merged and per-frame; coordinates match within float32.
  const synth::OracleScene scene =
      synth::Scene(synth::preset_scene("static", 5, 3)).render_all(6);
  core::CloudSequence seq = core::assemble_global(scene.clouds, scene.poses, scene.intrinsics);
  const fs::path merged = dir.path / "merged.ply";
  io::write_ply(merged, seq);
  const MiniPly parsed(merged);
  std::size_t expected = 0;
  for (const auto& f : seq.frames) expected += f.valid_count();
  REQUIRE(parsed.vertex_count == expected);
  std::size_t cursor = 0;
  for (const auto& frame : seq.frames) {
    for (std::size_t k = 0; k < frame.size(); ++k) {
      if (!frame.valid[k]) continue;
      CHECK(parsed.xyz[cursor][0] == static_cast<float>(frame.points[k].x()));
      CHECK(parsed.xyz[cursor][1] == static_cast<float>(frame.points[k].y()));
      CHECK(parsed.xyz[cursor][2] == static_cast<float>(frame.points[k].z()));
      ++cursor;
    }
  }

  io::PlyOptions per_frame;
  per_frame.merged = false;
  per_frame.color = io::PlyColor::kFrameIndex;
  const auto files = io::write_ply(dir.path / "frames", seq, per_frame);
  REQUIRE(files.size() == seq.frames.size());
  std::size_t total = 0;
  for (std::size_t t = 0; t < files.size(); ++t) {
    const MiniPly frame_ply(files[t]);
    CHECK(frame_ply.vertex_count == seq.frames[t].valid_count());
    total += frame_ply.vertex_count;
    if (frame_ply.vertex_count > 0) {
      // Frame-index coloring is constant within a frame.
      CHECK(frame_ply.rgb.front() == frame_ply.rgb.back());
    }
  }
  CHECK(total == expected);

  CHECK_THROWS_AS(io::write_ply(dir.path / "x.ply", core::CloudSequence{}), InputShapeError);
}

TEST_CASE("intrinsics and poses JSON round trip exactly; bad conventions rejected") {
  TempDir dir("mono4d_io_json");
  core::CameraIntrinsics k;
  k.fx = 110.25;
  k.fy = 109.75;
  k.cx = 63.5;
  k.cy = 47.25;
  k.width = 128;
  k.height = 96;
  const fs::path kfile = dir.path / "intrinsics.json";
  io::write_intrinsics_json(kfile, k);
  const core::CameraIntrinsics kback = io::read_intrinsics_json(kfile);
  CHECK(kback.fx == k.fx);
  CHECK(kback.fy == k.fy);
  CHECK(kback.cx == k.cx);
  CHECK(kback.cy == k.cy);
  CHECK(kback.width == k.width);
  CHECK(kback.height == k.height);

  const synth::OracleScene scene =
      synth::Scene(synth::preset_scene("orbit", 2, 4)).render_all(4);
  const fs::path pfile = dir.path / "poses.json";
  io::write_poses_json(pfile, scene.poses);
  const std::vector<core::PoseSE3> poses = io::read_poses_json(pfile);
  REQUIRE(poses.size() == scene.poses.size());
  for (std::size_t t = 0; t < poses.size(); ++t) {
    CHECK((poses[t].rotation - scene.poses[t].rotation).cwiseAbs().maxCoeff() == 0.0);
    CHECK((poses[t].translation - scene.poses[t].translation).cwiseAbs().maxCoeff() == 0.0);
  }

  auto expect_parse_error = [&](const std::string& name, const std::string& content,
                                const std::string& needle) {
    const fs::path file = dir.path / name;
    write_bytes(file, content);
    try {
      io::read_poses_json(file);
      FAIL("expected ParseError for " << name);
    } catch (const ParseError& e) {
      const std::string what = e.what();
      CAPTURE(what);
      CHECK(what.find(needle) != std::string::npos);
    }
  };
  expect_parse_error("w2c.json",
                     R"({"convention":"world_to_camera","poses":[]})",
                     "/convention");
  expect_parse_error("short_rot.json",
                     R"({"convention":"camera_to_world","poses":[{"rotation":[1,0,0,0,1,0,0,0],"translation":[0,0,0]}]})",
                     "/poses/0/rotation: expected 9 numbers, got 8");
  expect_parse_error("not_rot.json",
                     R"({"convention":"camera_to_world","poses":[{"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}]})",
                     "not a rotation matrix");
  expect_parse_error("no_conv.json", R"({"poses":[]})", "/convention: missing");
}

TEST_CASE("tracks JSON round trips bit-exactly") {
  TempDir dir("mono4d_io_tracks");
  const synth::OracleScene scene =
      synth::Scene(synth::preset_scene("dynamic", 9, 5)).render_all(7);
  const fs::path file = dir.path / "tracks.json";
  io::write_tracks_json(file, scene.tracks.tracks);
  const corr::TrackSet back = io::read_tracks_json(file);
  REQUIRE(back.num_tracks == scene.tracks.tracks.num_tracks);
  REQUIRE(back.num_frames == scene.tracks.tracks.num_frames);
  CHECK(back.query_frame == scene.tracks.tracks.query_frame);
  CHECK(back.visible == scene.tracks.tracks.visible);
  for (std::size_t k = 0; k < back.positions.size(); ++k) {
    CHECK(back.positions[k].x() == scene.tracks.tracks.positions[k].x());
    CHECK(back.positions[k].y() == scene.tracks.tracks.positions[k].y());
  }

  const fs::path bad = dir.path / "bad.json";
  write_bytes(bad, R"({"num_tracks":2,"num_frames":1,"query_frame":0,)"
                   R"("positions":[0,0,1,1],"visibility":[1,2]})");
  CHECK_THROWS_AS(io::read_tracks_json(bad), ParseError);
}

TEST_CASE("synthetic scene export validates clean and loads back equal") {
  TempDir dir("mono4d_io_scene");
  const synth::OracleScene scene =
      synth::Scene(synth::preset_scene("dynamic", 3, 4)).render_all(8);
  const fs::path manifest_path =
      manifest::write_synthetic_scene(dir.path / "scene", scene, "dynamic-test");

  const manifest::SceneManifest m = manifest::read_manifest(manifest_path);
  CHECK(m.scene_id == "dynamic-test");
  CHECK(m.frame_count == 4);
  CHECK(m.has_ground_truth());
  CHECK(manifest::validate_manifest(m).empty());

  const manifest::SceneData data = manifest::load_scene(m);
  REQUIRE(data.depths.size() == 4);
  REQUIRE(data.flows.size() == 3);
  REQUIRE(data.dynamic_masks.size() == 4);
  REQUIRE(data.confidence.size() == 4);
  REQUIRE(data.gt_poses.size() == 4);
  CHECK(data.intrinsics.fx == scene.intrinsics.fx);
  CHECK(data.tracks.num_tracks == scene.tracks.tracks.num_tracks);

  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(data.depths[t].valid == scene.depths[t].valid);
    for (std::size_t k = 0; k < data.depths[t].size(); ++k) {
      if (!scene.depths[t].valid[k]) continue;
      CHECK(data.depths[t].values[k] ==
            static_cast<double>(static_cast<float>(scene.depths[t].values[k])));
    }
    CHECK(data.dynamic_masks[t].values == scene.dynamic_masks[t].values);  // binary masks
    CHECK((data.gt_poses[t].rotation - scene.poses[t].rotation).cwiseAbs().maxCoeff() == 0.0);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(data.flows[i].valid == scene.flows[i].valid);
  }

  // Determinism: a second export of the same scene is byte-identical.
  manifest::write_synthetic_scene(dir.path / "again", scene, "dynamic-test");
  for (const std::string name :
       {"manifest.json", "depth_00002.pfm", "tracks.json", "gt_poses.json",
        "flow_00001_00002.u.pfm", "dynamic_00003.pgm"}) {
    CAPTURE(name);
    CHECK(read_bytes(dir.path / "scene" / name) == read_bytes(dir.path / "again" / name));
  }
}

TEST_CASE("manifest validation enumerates every problem, and load_scene carries them") {
  TempDir dir("mono4d_io_badscene");
  const synth::OracleScene scene =
      synth::Scene(synth::preset_scene("static", 5, 3)).render_all(6);
  const fs::path manifest_path =
      manifest::write_synthetic_scene(dir.path / "scene", scene, "broken");

  manifest::SceneManifest m = manifest::read_manifest(manifest_path);
  // Break three independent things: truncate one depth file, remove one mask,
  // and declare a wrong frame count (which also desyncs every list length).
  write_bytes(m.resolve(m.depth_files[1]), "Pf\n128 96\n-1.0\nshort");
  fs::remove(m.resolve(m.dynamic_mask_files[2]));
  m.frame_count = 4;

  const std::vector<std::string> problems = manifest::validate_manifest(m);
  CHECK(problems.size() >= 3);
  bool saw_truncated = false, saw_missing = false, saw_count = false;
  for (const auto& p : problems) {
    if (p.find("truncated") != std::string::npos) saw_truncated = true;
    if (p.find("dynamic_00002.pgm") != std::string::npos) saw_missing = true;
    if (p.find("expected 4 entries, got 3") != std::string::npos) saw_count = true;
  }
  CHECK(saw_truncated);
  CHECK(saw_missing);
  CHECK(saw_count);

  try {
    manifest::load_scene(m);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.problems() == problems);
    CHECK(std::string(e.what()).find("broken") != std::string::npos);
  }

  const fs::path bad_manifest = dir.path / "bad_manifest.json";
  write_bytes(bad_manifest, R"({"frame_count":2})");
  try {
    manifest::read_manifest(bad_manifest);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("/scene_id") != std::string::npos);
  }
}
