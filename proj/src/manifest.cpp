#include "mono4d/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mono4d/errors.hpp"
#include "mono4d/io.hpp"

namespace mono4d::manifest {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::filesystem::path& file, const std::string& pointer,
                       const std::string& what) {
  throw ParseError(file.string() + ": " + pointer + ": " + what);
}

const json& member(const json& parent, const char* key, const std::string& pointer,
                   const std::filesystem::path& file) {
  if (!parent.is_object()) fail(file, pointer.empty() ? "/" : pointer, "expected an object");
  const auto it = parent.find(key);
  if (it == parent.end()) fail(file, pointer + "/" + key, "missing");
  return *it;
}

std::string string_field(const json& parent, const char* key, const std::string& pointer,
                         const std::filesystem::path& file) {
  const json& j = member(parent, key, pointer, file);
  if (!j.is_string() || j.get<std::string>().empty()) {
    fail(file, pointer + "/" + key, "expected a non-empty string");
  }
  return j.get<std::string>();
}

std::vector<std::filesystem::path> path_list(const json& parent, const char* key,
                                             const std::string& pointer,
                                             const std::filesystem::path& file) {
  const json& j = member(parent, key, pointer, file);
  if (!j.is_array()) fail(file, pointer + "/" + key, "expected an array");
  std::vector<std::filesystem::path> out;
  out.reserve(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_string() || j[k].get<std::string>().empty()) {
      fail(file, pointer + "/" + key + "/" + std::to_string(k), "expected a non-empty string");
    }
    out.emplace_back(j[k].get<std::string>());
  }
  return out;
}

std::string zero_padded(std::size_t value) {
  std::ostringstream s;
  s.width(5);
  s.fill('0');
  s << value;
  return s.str();
}

/// Loads everything the manifest references, appending one line per problem
/// instead of throwing. Returns the (possibly partial) data.
SceneData load_collecting(const SceneManifest& m, std::vector<std::string>* problems) {
  SceneData data;
  auto note = [problems](const std::string& p) { problems->push_back(p); };

  if (m.frame_count < 1) {
    note("frame_count must be at least 1, got " + std::to_string(m.frame_count));
  }
  const std::size_t n = static_cast<std::size_t>(std::max(m.frame_count, 0));
  auto check_count = [&note](const char* what, std::size_t got, std::size_t want) {
    if (got != want) {
      std::ostringstream msg;
      msg << what << ": expected " << want << " entries, got " << got;
      note(msg.str());
    }
  };
  check_count("depths", m.depth_files.size(), n);
  check_count("flows (u)", m.flow_u_files.size(), n > 0 ? n - 1 : 0);
  check_count("flows (v)", m.flow_v_files.size(), n > 0 ? n - 1 : 0);
  check_count("dynamic_masks", m.dynamic_mask_files.size(), n);
  if (!m.gt_depth_files.empty()) check_count("gt depths", m.gt_depth_files.size(), n);

  // Each loader reports its own file in the problem line.
  auto attempt = [&note](const std::filesystem::path& file, auto&& loader) {
    try {
      loader(file);
    } catch (const std::exception& e) {
      note(e.what());
    }
  };

  bool have_intrinsics = false;
  attempt(m.resolve(m.intrinsics_file), [&](const std::filesystem::path& f) {
    data.intrinsics = io::read_intrinsics_json(f);
    have_intrinsics = true;
  });
  attempt(m.resolve(m.tracks_file), [&](const std::filesystem::path& f) {
    data.tracks = io::read_tracks_json(f);
    if (data.tracks.num_frames != m.frame_count) {
      std::ostringstream msg;
      msg << f.string() << ": track set spans " << data.tracks.num_frames
          << " frames, manifest declares " << m.frame_count;
      note(msg.str());
    }
  });

  auto check_raster = [&](const std::filesystem::path& f, int height, int width,
                          const char* kind) {
    if (!have_intrinsics) return;
    if (height != data.intrinsics.height || width != data.intrinsics.width) {
      std::ostringstream msg;
      msg << f.string() << ": " << kind << " is " << width << "x" << height
          << ", intrinsics declare " << data.intrinsics.width << "x" << data.intrinsics.height;
      note(msg.str());
    }
  };

  for (const auto& rel : m.depth_files) {
    attempt(m.resolve(rel), [&](const std::filesystem::path& f) {
      core::DepthMap d = io::read_depth_pfm(f);
      check_raster(f, d.height, d.width, "depth");
      data.depths.push_back(std::move(d));
    });
  }
  const std::size_t flow_count = std::min(m.flow_u_files.size(), m.flow_v_files.size());
  for (std::size_t i = 0; i < flow_count; ++i) {
    const std::filesystem::path u = m.resolve(m.flow_u_files[i]);
    const std::filesystem::path v = m.resolve(m.flow_v_files[i]);
    try {
      corr::FlowField flow = io::read_flow_pfm(u, v);
      check_raster(u, flow.height, flow.width, "flow");
      data.flows.push_back(std::move(flow));
    } catch (const std::exception& e) {
      note(e.what());
    }
  }
  for (const auto& rel : m.dynamic_mask_files) {
    attempt(m.resolve(rel), [&](const std::filesystem::path& f) {
      corr::ConfidenceMask mask = io::read_mask(f);
      check_raster(f, mask.height, mask.width, "dynamic mask");
      data.dynamic_masks.push_back(std::move(mask));
    });
  }
  for (const auto& rel : m.gt_depth_files) {
    attempt(m.resolve(rel), [&](const std::filesystem::path& f) {
      core::DepthMap d = io::read_depth_pfm(f);
      check_raster(f, d.height, d.width, "ground-truth depth");
      data.gt_depths.push_back(std::move(d));
    });
  }
  if (!m.gt_poses_file.empty()) {
    attempt(m.resolve(m.gt_poses_file), [&](const std::filesystem::path& f) {
      data.gt_poses = io::read_poses_json(f);
      if (data.gt_poses.size() != n) {
        std::ostringstream msg;
        msg << f.string() << ": " << data.gt_poses.size() << " poses for " << m.frame_count
            << " frames";
        note(msg.str());
      }
    });
  }

  if (problems->empty()) {
    data.confidence.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
      data.confidence.push_back(corr::compose_pseudo_mask(
          data.dynamic_masks[t],
          corr::flying_pixel_mask(data.depths[t], corr::kFlyingPixelRelThreshold)));
    }
  }
  return data;
}

}  // namespace

SceneManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string() + " for reading");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }

  SceneManifest m;
  m.root = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
  m.scene_id = string_field(root, "scene_id", "", file);
  const json& frames = member(root, "frame_count", "", file);
  if (!frames.is_number_integer() || frames.get<long long>() < 1) {
    fail(file, "/frame_count", "expected a positive integer");
  }
  m.frame_count = frames.get<int>();
  m.intrinsics_file = string_field(root, "intrinsics", "", file);
  m.tracks_file = string_field(root, "tracks", "", file);
  m.depth_files = path_list(root, "depths", "", file);
  m.dynamic_mask_files = path_list(root, "dynamic_masks", "", file);

  const json& flows = member(root, "flows", "", file);
  if (!flows.is_array()) fail(file, "/flows", "expected an array");
  for (std::size_t i = 0; i < flows.size(); ++i) {
    const std::string pointer = "/flows/" + std::to_string(i);
    m.flow_u_files.emplace_back(string_field(flows[i], "u", pointer, file));
    m.flow_v_files.emplace_back(string_field(flows[i], "v", pointer, file));
  }

  if (root.contains("gt")) {
    const json& gt = root["gt"];
    m.gt_depth_files = path_list(gt, "depths", "/gt", file);
    m.gt_poses_file = string_field(gt, "poses", "/gt", file);
  }
  return m;
}

void write_manifest(const std::filesystem::path& file, const SceneManifest& manifest) {
  json root;
  root["scene_id"] = manifest.scene_id;
  root["frame_count"] = manifest.frame_count;
  root["intrinsics"] = manifest.intrinsics_file.generic_string();
  root["tracks"] = manifest.tracks_file.generic_string();
  json depths = json::array();
  for (const auto& p : manifest.depth_files) depths.push_back(p.generic_string());
  root["depths"] = std::move(depths);
  json flows = json::array();
  for (std::size_t i = 0; i < manifest.flow_u_files.size(); ++i) {
    json pair;
    pair["u"] = manifest.flow_u_files[i].generic_string();
    pair["v"] = i < manifest.flow_v_files.size() ? manifest.flow_v_files[i].generic_string()
                                                 : std::string();
    flows.push_back(std::move(pair));
  }
  root["flows"] = std::move(flows);
  json masks = json::array();
  for (const auto& p : manifest.dynamic_mask_files) masks.push_back(p.generic_string());
  root["dynamic_masks"] = std::move(masks);
  if (!manifest.gt_depth_files.empty() || !manifest.gt_poses_file.empty()) {
    json gt;
    json gt_depths = json::array();
    for (const auto& p : manifest.gt_depth_files) gt_depths.push_back(p.generic_string());
    gt["depths"] = std::move(gt_depths);
    gt["poses"] = manifest.gt_poses_file.generic_string();
    root["gt"] = std::move(gt);
  }

  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << root.dump(2) << "\n";
  if (!out) throw IoError("write failure on " + file.string());
}

std::vector<std::string> validate_manifest(const SceneManifest& manifest) {
  std::vector<std::string> problems;
  load_collecting(manifest, &problems);
  return problems;
}

SceneData load_scene(const SceneManifest& manifest) {
  std::vector<std::string> problems;
  SceneData data = load_collecting(manifest, &problems);
  if (!problems.empty()) {
    std::ostringstream what;
    what << "manifest for scene \"" << manifest.scene_id << "\" failed validation with "
         << problems.size() << " problem(s):";
    for (const auto& p : problems) what << "\n  - " << p;
    throw ValidationError(what.str(), problems);
  }
  return data;
}

std::filesystem::path write_synthetic_scene(const std::filesystem::path& dir,
                                            const synth::OracleScene& scene,
                                            const std::string& scene_id) {
  const std::size_t n = scene.depths.size();
  if (n == 0) throw InputShapeError("cannot write an empty scene");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  SceneManifest m;
  m.scene_id = scene_id;
  m.frame_count = static_cast<int>(n);
  m.root = dir;
  m.intrinsics_file = "intrinsics.json";
  m.tracks_file = "tracks.json";
  m.gt_poses_file = "gt_poses.json";

  io::write_intrinsics_json(dir / m.intrinsics_file, scene.intrinsics);
  io::write_tracks_json(dir / m.tracks_file, scene.tracks.tracks);
  io::write_poses_json(dir / m.gt_poses_file, scene.poses);

  for (std::size_t t = 0; t < n; ++t) {
    const std::string depth_name = "depth_" + zero_padded(t) + ".pfm";
    io::write_depth_pfm(dir / depth_name, scene.depths[t]);
    m.depth_files.emplace_back(depth_name);
    m.gt_depth_files.emplace_back(depth_name);  // inputs are exact here

    const std::string mask_name = "dynamic_" + zero_padded(t) + ".pgm";
    io::write_mask_pgm(dir / mask_name, scene.dynamic_masks[t]);
    m.dynamic_mask_files.emplace_back(mask_name);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::string stem = "flow_" + zero_padded(i) + "_" + zero_padded(i + 1);
    const std::string u_name = stem + ".u.pfm";
    const std::string v_name = stem + ".v.pfm";
    io::write_flow_pfm(dir / u_name, dir / v_name, scene.flows[i]);
    m.flow_u_files.emplace_back(u_name);
    m.flow_v_files.emplace_back(v_name);
  }

  const std::filesystem::path manifest_path = dir / "manifest.json";
  write_manifest(manifest_path, m);
  return manifest_path;
}

}  // namespace mono4d::manifest
