#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mono4d/errors.hpp"
#include "mono4d/io.hpp"

namespace mono4d::io {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::filesystem::path& file, const std::string& pointer,
                       const std::string& what) {
  throw ParseError(file.string() + ": " + pointer + ": " + what);
}

json load_json(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string() + " for reading");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

void store_json(const std::filesystem::path& file, const json& j, int indent) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << (indent >= 0 ? j.dump(indent) : j.dump()) << "\n";
  if (!out) throw IoError("write failure on " + file.string());
}

const json& member(const json& parent, const char* key, const std::string& pointer,
                   const std::filesystem::path& file) {
  if (!parent.is_object()) fail(file, pointer.empty() ? "/" : pointer, "expected an object");
  const auto it = parent.find(key);
  if (it == parent.end()) fail(file, pointer + "/" + key, "missing");
  return *it;
}

double number_field(const json& parent, const char* key, const std::string& pointer,
                    const std::filesystem::path& file) {
  const json& j = member(parent, key, pointer, file);
  if (!j.is_number()) fail(file, pointer + "/" + key, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(file, pointer + "/" + key, "expected a finite number");
  return v;
}

int positive_int_field(const json& parent, const char* key, const std::string& pointer,
                       const std::filesystem::path& file) {
  const json& j = member(parent, key, pointer, file);
  if (!j.is_number_integer() || j.get<long long>() <= 0) {
    fail(file, pointer + "/" + key, "expected a positive integer");
  }
  return j.get<int>();
}

std::vector<double> number_array(const json& j, std::size_t expected, const std::string& pointer,
                                 const std::filesystem::path& file) {
  if (!j.is_array()) fail(file, pointer, "expected an array");
  if (j.size() != expected) {
    std::ostringstream what;
    what << "expected " << expected << " numbers, got " << j.size();
    fail(file, pointer, what.str());
  }
  std::vector<double> out(expected);
  for (std::size_t k = 0; k < expected; ++k) {
    if (!j[k].is_number()) fail(file, pointer + "/" + std::to_string(k), "expected a number");
    out[k] = j[k].get<double>();
    if (!std::isfinite(out[k])) {
      fail(file, pointer + "/" + std::to_string(k), "expected a finite number");
    }
  }
  return out;
}

constexpr char kPoseConvention[] = "camera_to_world";

}  // namespace

core::CameraIntrinsics read_intrinsics_json(const std::filesystem::path& file) {
  const json root = load_json(file);
  core::CameraIntrinsics k;
  k.fx = number_field(root, "fx", "", file);
  k.fy = number_field(root, "fy", "", file);
  k.cx = number_field(root, "cx", "", file);
  k.cy = number_field(root, "cy", "", file);
  k.width = positive_int_field(root, "width", "", file);
  k.height = positive_int_field(root, "height", "", file);
  if (k.fx <= 0.0) fail(file, "/fx", "focal length must be positive");
  if (k.fy <= 0.0) fail(file, "/fy", "focal length must be positive");
  return k;
}

void write_intrinsics_json(const std::filesystem::path& file,
                           const core::CameraIntrinsics& intrinsics) {
  json root;
  root["fx"] = intrinsics.fx;
  root["fy"] = intrinsics.fy;
  root["cx"] = intrinsics.cx;
  root["cy"] = intrinsics.cy;
  root["width"] = intrinsics.width;
  root["height"] = intrinsics.height;
  store_json(file, root, 2);
}

std::vector<core::PoseSE3> read_poses_json(const std::filesystem::path& file) {
  const json root = load_json(file);
  const json& convention = member(root, "convention", "", file);
  if (!convention.is_string() || convention.get<std::string>() != kPoseConvention) {
    fail(file, "/convention",
         "unknown pose convention " + convention.dump() + ", expected \"" +
             std::string(kPoseConvention) + "\" (this reader never inverts silently)");
  }
  const json& list = member(root, "poses", "", file);
  if (!list.is_array()) fail(file, "/poses", "expected an array");

  std::vector<core::PoseSE3> poses;
  poses.reserve(list.size());
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string pointer = "/poses/" + std::to_string(i);
    const json& entry = list[i];
    const std::vector<double> r =
        number_array(member(entry, "rotation", pointer, file), 9, pointer + "/rotation", file);
    const std::vector<double> t = number_array(member(entry, "translation", pointer, file), 3,
                                               pointer + "/translation", file);
    core::PoseSE3 pose;
    pose.rotation << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
    pose.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    const double defect =
        (pose.rotation.transpose() * pose.rotation - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff();
    if (defect > 1e-6 || pose.rotation.determinant() < 0.0) {
      fail(file, pointer + "/rotation", "not a rotation matrix (orthonormality defect " +
                                            std::to_string(defect) + ")");
    }
    poses.push_back(pose);
  }
  return poses;
}

void write_poses_json(const std::filesystem::path& file,
                      const std::vector<core::PoseSE3>& poses) {
  json list = json::array();
  for (const auto& pose : poses) {
    json entry;
    json r = json::array();
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) r.push_back(pose.rotation(row, col));
    }
    entry["rotation"] = std::move(r);
    entry["translation"] = {pose.translation.x(), pose.translation.y(), pose.translation.z()};
    list.push_back(std::move(entry));
  }
  json root;
  root["convention"] = kPoseConvention;
  root["poses"] = std::move(list);
  store_json(file, root, 2);
}

corr::TrackSet read_tracks_json(const std::filesystem::path& file) {
  const json root = load_json(file);
  corr::TrackSet tracks;
  tracks.num_tracks = positive_int_field(root, "num_tracks", "", file);
  tracks.num_frames = positive_int_field(root, "num_frames", "", file);
  const json& query = member(root, "query_frame", "", file);
  if (!query.is_number_integer() || query.get<long long>() < 0) {
    fail(file, "/query_frame", "expected a non-negative integer");
  }
  tracks.query_frame = query.get<int>();

  const std::size_t n = std::size_t(tracks.num_tracks) * std::size_t(tracks.num_frames);
  const std::vector<double> flat =
      number_array(member(root, "positions", "", file), 2 * n, "/positions", file);
  tracks.positions.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    tracks.positions[k] = Eigen::Vector2d(flat[2 * k], flat[2 * k + 1]);
  }

  const json& vis = member(root, "visibility", "", file);
  if (!vis.is_array() || vis.size() != n) {
    std::ostringstream what;
    what << "expected " << n << " flags, got " << (vis.is_array() ? vis.size() : 0);
    fail(file, "/visibility", what.str());
  }
  tracks.visible.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!vis[k].is_number_integer()) {
      fail(file, "/visibility/" + std::to_string(k), "expected 0 or 1");
    }
    const long long flag = vis[k].get<long long>();
    if (flag != 0 && flag != 1) {
      fail(file, "/visibility/" + std::to_string(k), "expected 0 or 1");
    }
    tracks.visible[k] = static_cast<std::uint8_t>(flag);
  }
  try {
    tracks.validate();
  } catch (const std::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  return tracks;
}

void write_tracks_json(const std::filesystem::path& file, const corr::TrackSet& tracks) {
  tracks.validate();
  json root;
  root["num_tracks"] = tracks.num_tracks;
  root["num_frames"] = tracks.num_frames;
  root["query_frame"] = tracks.query_frame;
  json positions = json::array();
  for (const auto& p : tracks.positions) {
    positions.push_back(p.x());
    positions.push_back(p.y());
  }
  root["positions"] = std::move(positions);
  json visibility = json::array();
  for (std::uint8_t v : tracks.visible) visibility.push_back(static_cast<int>(v));
  root["visibility"] = std::move(visibility);
  store_json(file, root, -1);  // compact: track files can hold ~1e5 numbers
}

}  // namespace mono4d::io
