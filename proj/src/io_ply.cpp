#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "mono4d/errors.hpp"
#include "mono4d/io.hpp"

namespace mono4d::io {
namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

// Distinct hues cycled by frame index.
constexpr std::array<Rgb, 12> kFramePalette = {{{230, 25, 75},
                                                {60, 180, 75},
                                                {255, 225, 25},
                                                {0, 130, 200},
                                                {245, 130, 48},
                                                {145, 30, 180},
                                                {70, 240, 240},
                                                {240, 50, 230},
                                                {210, 245, 60},
                                                {250, 190, 212},
                                                {0, 128, 128},
                                                {220, 190, 255}}};

Rgb height_color(double y, double y_min, double y_max) {
  const double span = y_max - y_min;
  const double v = span > 0.0 ? std::clamp((y - y_min) / span, 0.0, 1.0) : 0.5;
  return {static_cast<std::uint8_t>(std::lround(255.0 * v)), 64,
          static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)))};
}

void append_float(std::vector<char>* out, float v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out->insert(out->end(), buf, buf + 4);
}

void write_frames(const std::filesystem::path& file, const core::CloudSequence& seq,
                  std::size_t begin, std::size_t end, const PlyOptions& options, double y_min,
                  double y_max) {
  std::size_t count = 0;
  for (std::size_t t = begin; t < end; ++t) count += seq.frames[t].valid_count();

  std::ostringstream header;
  header << "ply\n"
         << "format binary_little_endian 1.0\n"
         << "comment monocular 4D reconstruction export\n"
         << "element vertex " << count << "\n"
         << "property float x\nproperty float y\nproperty float z\n"
         << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         << "end_header\n";

  std::vector<char> payload;
  payload.reserve(count * 15);
  for (std::size_t t = begin; t < end; ++t) {
    const core::FrameCloud& frame = seq.frames[t];
    const Rgb frame_rgb = kFramePalette[t % kFramePalette.size()];
    for (std::size_t k = 0; k < frame.size(); ++k) {
      if (!frame.valid[k]) continue;
      const Eigen::Vector3d& p = frame.points[k];
      append_float(&payload, static_cast<float>(p.x()));
      append_float(&payload, static_cast<float>(p.y()));
      append_float(&payload, static_cast<float>(p.z()));
      const Rgb rgb = options.color == PlyColor::kFrameIndex
                          ? frame_rgb
                          : height_color(p.y(), y_min, y_max);
      payload.push_back(static_cast<char>(rgb.r));
      payload.push_back(static_cast<char>(rgb.g));
      payload.push_back(static_cast<char>(rgb.b));
    }
  }

  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  const std::string head = header.str();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failure on " + file.string());
}

std::string frame_file_name(std::size_t t) {
  std::ostringstream name;
  name << "frame_";
  name.width(5);
  name.fill('0');
  name << t;
  return name.str() + ".ply";
}

}  // namespace

std::vector<std::filesystem::path> write_ply(const std::filesystem::path& target,
                                             const core::CloudSequence& seq,
                                             const PlyOptions& options) {
  if (seq.frames.empty()) throw InputShapeError("cannot export an empty cloud sequence");

  // One height ramp over the whole sequence keeps colors comparable across
  // frames and output modes.
  double y_min = std::numeric_limits<double>::infinity();
  double y_max = -std::numeric_limits<double>::infinity();
  for (const auto& frame : seq.frames) {
    for (std::size_t k = 0; k < frame.size(); ++k) {
      if (!frame.valid[k]) continue;
      y_min = std::min(y_min, frame.points[k].y());
      y_max = std::max(y_max, frame.points[k].y());
    }
  }
  if (!(y_min <= y_max)) {
    y_min = 0.0;
    y_max = 1.0;
  }

  std::vector<std::filesystem::path> written;
  std::error_code ec;
  if (options.merged) {
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path(), ec);
    write_frames(target, seq, 0, seq.frames.size(), options, y_min, y_max);
    written.push_back(target);
  } else {
    std::filesystem::create_directories(target, ec);
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      const std::filesystem::path file = target / frame_file_name(t);
      write_frames(file, seq, t, t + 1, options, y_min, y_max);
      written.push_back(file);
    }
  }
  return written;
}

}  // namespace mono4d::io
