#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "mono4d/errors.hpp"
#include "mono4d/io.hpp"

namespace mono4d::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "raster I/O assumes a little-endian host");

std::vector<char> slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string() + " for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + file.string());
  return bytes;
}

void spill(const std::filesystem::path& file, const std::string& header, const char* payload,
           std::size_t payload_size) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload, static_cast<std::streamsize>(payload_size));
  if (!out) throw IoError("write failure on " + file.string());
}

[[noreturn]] void fail_at(const std::filesystem::path& file, std::size_t offset,
                          const std::string& what) {
  std::ostringstream msg;
  msg << file.string() << ": " << what << " (byte " << offset << ")";
  throw ParseError(msg.str());
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

/// Walks the whitespace-separated header tokens of a netpbm-style file,
/// remembering byte offsets for error messages.
struct HeaderCursor {
  const std::vector<char>& bytes;
  const std::filesystem::path& file;
  bool allow_comments = false;  // PGM headers may hold '#' comments
  std::size_t pos = 0;

  void skip_separators() {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (allow_comments && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::string token(const std::string& expectation) {
    skip_separators();
    if (pos >= bytes.size()) fail_at(file, pos, "unexpected end of header, expected " + expectation);
    const std::size_t start = pos;
    while (pos < bytes.size() && !is_space(bytes[pos])) ++pos;
    return std::string(bytes.data() + start, pos - start);
  }

  int positive_int(const std::string& expectation) {
    const std::size_t at = position_of_next_token();
    const std::string tok = token(expectation);
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(tok, &used);
    } catch (const std::exception&) {
      fail_at(file, at, "expected " + expectation + ", got \"" + tok + "\"");
    }
    if (used != tok.size() || value <= 0 || value > std::numeric_limits<int>::max()) {
      fail_at(file, at, "expected " + expectation + ", got \"" + tok + "\"");
    }
    return static_cast<int>(value);
  }

  double number(const std::string& expectation) {
    const std::size_t at = position_of_next_token();
    const std::string tok = token(expectation);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(tok, &used);
    } catch (const std::exception&) {
      fail_at(file, at, "expected " + expectation + ", got \"" + tok + "\"");
    }
    if (used != tok.size()) fail_at(file, at, "expected " + expectation + ", got \"" + tok + "\"");
    return value;
  }

  /// The payload begins after exactly one whitespace byte following the last
  /// header token.
  std::size_t payload_start() {
    if (pos >= bytes.size() || !is_space(bytes[pos])) {
      fail_at(file, pos, "expected a single whitespace byte before the pixel payload");
    }
    return pos + 1;
  }

  std::size_t position_of_next_token() {
    skip_separators();
    return pos;
  }
};

void check_payload(const std::filesystem::path& file, const std::vector<char>& bytes,
                   std::size_t start, std::size_t expected) {
  if (bytes.size() - start < expected) {
    std::ostringstream what;
    what << "truncated pixel payload: expected " << expected << " bytes, found "
         << bytes.size() - start;
    fail_at(file, bytes.size(), what.str());
  }
}

float byteswapped(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  u = ((u & 0x000000ffu) << 24) | ((u & 0x0000ff00u) << 8) | ((u & 0x00ff0000u) >> 8) |
      ((u & 0xff000000u) >> 24);
  std::memcpy(&v, &u, 4);
  return v;
}

constexpr float kInvalidPixel = std::numeric_limits<float>::quiet_NaN();

}  // namespace

FloatRaster read_pfm(const std::filesystem::path& file) {
  const std::vector<char> bytes = slurp(file);
  HeaderCursor cursor{bytes, file};

  const std::string magic = cursor.token("PFM magic \"Pf\"");
  if (magic == "PF") {
    fail_at(file, 0, "3-channel \"PF\" rasters are not supported, expected single-channel \"Pf\"");
  }
  if (magic != "Pf") {
    fail_at(file, 0, "bad magic \"" + magic + "\", expected \"Pf\"");
  }
  const int width = cursor.positive_int("a positive integer width");
  const int height = cursor.positive_int("a positive integer height");
  const std::size_t scale_at = cursor.pos;
  const double scale = cursor.number("a nonzero scale");
  if (scale == 0.0 || !std::isfinite(scale)) {
    fail_at(file, scale_at, "scale must be finite and nonzero");
  }
  const bool little_endian = scale < 0.0;
  const std::size_t start = cursor.payload_start();
  const std::size_t count = std::size_t(width) * std::size_t(height);
  check_payload(file, bytes, start, count * 4);

  FloatRaster raster(height, width);
  for (int r = 0; r < height; ++r) {
    // PFM stores the bottom row first.
    const std::size_t file_row = std::size_t(height - 1 - r);
    const char* src = bytes.data() + start + file_row * width * 4;
    std::memcpy(raster.values.data() + raster.index(r, 0), src, std::size_t(width) * 4);
  }
  if (!little_endian) {
    for (float& v : raster.values) v = byteswapped(v);
  }
  return raster;
}

void write_pfm(const std::filesystem::path& file, const FloatRaster& raster) {
  if (raster.height <= 0 || raster.width <= 0 ||
      raster.values.size() != std::size_t(raster.height) * raster.width) {
    throw InputShapeError("raster dimensions do not match its value count");
  }
  std::ostringstream header;
  header << "Pf\n" << raster.width << " " << raster.height << "\n-1.0\n";

  std::vector<char> payload(raster.values.size() * 4);
  for (int r = 0; r < raster.height; ++r) {
    const std::size_t file_row = std::size_t(raster.height - 1 - r);
    std::memcpy(payload.data() + file_row * raster.width * 4,
                raster.values.data() + raster.index(r, 0), std::size_t(raster.width) * 4);
  }
  spill(file, header.str(), payload.data(), payload.size());
}

core::DepthMap read_depth_pfm(const std::filesystem::path& file) {
  const FloatRaster raster = read_pfm(file);
  std::vector<double> values(raster.values.begin(), raster.values.end());
  return core::DepthMap::from_values(raster.height, raster.width, std::move(values));
}

void write_depth_pfm(const std::filesystem::path& file, const core::DepthMap& depth) {
  FloatRaster raster(depth.height, depth.width);
  for (std::size_t k = 0; k < depth.size(); ++k) {
    raster.values[k] = depth.valid[k] ? static_cast<float>(depth.values[k]) : kInvalidPixel;
  }
  write_pfm(file, raster);
}

corr::FlowField read_flow_pfm(const std::filesystem::path& u_file,
                              const std::filesystem::path& v_file) {
  const FloatRaster u = read_pfm(u_file);
  const FloatRaster v = read_pfm(v_file);
  if (u.height != v.height || u.width != v.width) {
    std::ostringstream msg;
    msg << "flow channel dimensions disagree: " << u_file.string() << " is " << u.width << "x"
        << u.height << ", " << v_file.string() << " is " << v.width << "x" << v.height;
    throw ParseError(msg.str());
  }
  corr::FlowField flow(u.height, u.width);
  for (std::size_t k = 0; k < flow.size(); ++k) {
    if (std::isfinite(u.values[k]) && std::isfinite(v.values[k])) {
      flow.du[k] = u.values[k];
      flow.dv[k] = v.values[k];
      flow.valid[k] = 1;
    }
  }
  return flow;
}

void write_flow_pfm(const std::filesystem::path& u_file, const std::filesystem::path& v_file,
                    const corr::FlowField& flow) {
  flow.validate();
  FloatRaster u(flow.height, flow.width);
  FloatRaster v(flow.height, flow.width);
  for (std::size_t k = 0; k < flow.size(); ++k) {
    u.values[k] = flow.valid[k] ? static_cast<float>(flow.du[k]) : kInvalidPixel;
    v.values[k] = flow.valid[k] ? static_cast<float>(flow.dv[k]) : kInvalidPixel;
  }
  write_pfm(u_file, u);
  write_pfm(v_file, v);
}

corr::ConfidenceMask read_mask(const std::filesystem::path& file) {
  const std::string ext = file.extension().string();
  corr::ConfidenceMask mask;
  if (ext == ".pfm") {
    const FloatRaster raster = read_pfm(file);
    mask = corr::ConfidenceMask(raster.height, raster.width);
    for (std::size_t k = 0; k < mask.size(); ++k) {
      const float v = raster.values[k];
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
        fail_at(file, 0, "confidence value outside [0, 1] at pixel " + std::to_string(k));
      }
      mask.values[k] = v;
    }
    return mask;
  }
  if (ext != ".pgm") {
    throw ParseError(file.string() + ": unsupported mask extension \"" + ext +
                     "\", expected .pgm or .pfm");
  }

  const std::vector<char> bytes = slurp(file);
  HeaderCursor cursor{bytes, file, /*allow_comments=*/true};
  const std::string magic = cursor.token("PGM magic \"P5\"");
  if (magic != "P5") fail_at(file, 0, "bad magic \"" + magic + "\", expected binary PGM \"P5\"");
  const int width = cursor.positive_int("a positive integer width");
  const int height = cursor.positive_int("a positive integer height");
  const std::size_t maxval_at = cursor.pos;
  const int maxval = cursor.positive_int("a maxval in [1, 255]");
  if (maxval > 255) fail_at(file, maxval_at, "maxval " + std::to_string(maxval) + " exceeds 255");
  const std::size_t start = cursor.payload_start();
  const std::size_t count = std::size_t(width) * std::size_t(height);
  check_payload(file, bytes, start, count);

  mask = corr::ConfidenceMask(height, width);
  for (std::size_t k = 0; k < count; ++k) {
    mask.values[k] = static_cast<double>(static_cast<unsigned char>(bytes[start + k])) / maxval;
  }
  return mask;
}

void write_mask_pgm(const std::filesystem::path& file, const corr::ConfidenceMask& mask) {
  mask.validate();
  if (mask.height <= 0 || mask.width <= 0) {
    throw InputShapeError("cannot write an empty confidence mask");
  }
  std::ostringstream header;
  header << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<char> payload(mask.size());
  for (std::size_t k = 0; k < mask.size(); ++k) {
    payload[k] = static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(mask.values[k], 0.0, 1.0) * 255.0)));
  }
  spill(file, header.str(), payload.data(), payload.size());
}

}  // namespace mono4d::io
