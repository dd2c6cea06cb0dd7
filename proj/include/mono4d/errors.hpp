#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mono4d {

/// Inputs whose dimensions or counts do not line up (raster sizes, list lengths).
class InputShapeError : public std::invalid_argument {
 public:
  explicit InputShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Geometric configurations that admit no unique solution (rank deficiency,
/// zero variance, too few weighted correspondences).
class DegeneracyError : public std::runtime_error {
 public:
  explicit DegeneracyError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values or numerically impossible states encountered mid-computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed file content. Message carries the file path and, for binary
/// rasters, the byte offset at which parsing failed.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Manifest validation failure carrying every detected problem, not just the first.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(const std::string& what, std::vector<std::string> problems)
      : std::runtime_error(what), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// File-system level failures (missing file, short read, unwritable output).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mono4d
