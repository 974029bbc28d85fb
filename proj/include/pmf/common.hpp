#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmf {

// Sentinel for unlabeled / unsupervised pixels and points.
inline constexpr int32_t kIgnoreLabel = -1;
// Sentinel for image pixels that received no projected point.
inline constexpr int32_t kEmptyPixel = -1;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data: unreadable files, bad headers, truncated payloads,
// incompatible checkpoints. Maps to CLI exit code 2.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Tensor/map extent mismatches and invalid operation geometry.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration values (out-of-range hyperparameters etc.).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A verification pass (gradient check) failed. Maps to CLI exit code 3.
class CheckError : public Error {
 public:
  explicit CheckError(const std::string& msg) : Error(msg) {}
};

// Dense H x W scalar field (entropy, confidence, importance, KL values).
struct Map2D {
  int height = 0;
  int width = 0;
  std::vector<double> v;

  Map2D() = default;
  Map2D(int h, int w, double fill = 0.0)
      : height(h), width(w), v(static_cast<size_t>(h) * w, fill) {}

  double& at(int h, int w) { return v[static_cast<size_t>(h) * width + w]; }
  double at(int h, int w) const { return v[static_cast<size_t>(h) * width + w]; }
  size_t size() const { return v.size(); }
};

// Dense H x W class-id field with kIgnoreLabel for unsupervised pixels.
struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<int32_t> ids;

  LabelImage() = default;
  LabelImage(int h, int w, int32_t fill = kIgnoreLabel)
      : height(h), width(w), ids(static_cast<size_t>(h) * w, fill) {}

  int32_t& at(int h, int w) { return ids[static_cast<size_t>(h) * width + w]; }
  int32_t at(int h, int w) const { return ids[static_cast<size_t>(h) * width + w]; }
  size_t size() const { return ids.size(); }
};

// Worker cap for per-scan parallel sections. Honors PMF_NUM_THREADS.
int worker_count();

}  // namespace pmf
