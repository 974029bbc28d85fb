#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "pmf/common.hpp"
#include "pmf/tensor.hpp"

namespace pmf::geom {

struct LidarPoint {
  double x = 0.0;  // meters
  double y = 0.0;
  double z = 0.0;
  double r = 0.0;  // reflectance

  double range() const;
};

struct PointCloud {
  std::vector<LidarPoint> points;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Mat3x3 {
  std::array<double, 9> m{};
  double at(int r, int c) const { return m[static_cast<size_t>(r) * 3 + c]; }
  double& at(int r, int c) { return m[static_cast<size_t>(r) * 3 + c]; }
  static Mat3x3 identity();
};

struct Mat3x4 {
  std::array<double, 12> m{};
  double at(int r, int c) const { return m[static_cast<size_t>(r) * 4 + c]; }
  double& at(int r, int c) { return m[static_cast<size_t>(r) * 4 + c]; }
  // [ I | 0 ]
  static Mat3x4 identity_projection();
};

struct Calibration {
  Mat3x4 T;        // LiDAR -> camera projection
  Mat3x3 R0;      // rectifying rotation, expanded to 4x4 internally
  int image_height = 0;
  int image_width = 0;
};

// Continuous image coordinates of one projected point. Note the convention:
// h = x~/z~ indexes the first image axis, w = y~/z~ the second.
struct ProjectedPoint {
  double h = 0.0;
  double w = 0.0;
  double depth = 0.0;  // z~ in camera coordinates
};

struct PixelCoord {
  int32_t h = kEmptyPixel;
  int32_t w = kEmptyPixel;
  bool in_view() const { return h >= 0; }
};

enum class ProjectionMode { kPerspective, kSpherical };

// 5-channel projected scan: features [5,H,W] ordered (d, x, y, z, r),
// plus the point/pixel correspondence needed to move labels and
// predictions between the two domains.
struct ProjectedScan {
  Tensor features;                       // [5,H,W], zeros at invalid pixels
  std::vector<int32_t> pixel_to_point;   // H*W, kEmptyPixel where no point
  std::vector<uint8_t> valid_mask;       // H*W
  LabelImage label_image;                // kIgnoreLabel at invalid pixels
  std::vector<PixelCoord> point_to_pixel;  // per point, {-1,-1} if out of view
  int height = 0;
  int width = 0;

  bool valid(int h, int w) const {
    return valid_mask[static_cast<size_t>(h) * width + w] != 0;
  }
  int32_t point_at(int h, int w) const {
    return pixel_to_point[static_cast<size_t>(h) * width + w];
  }
  size_t valid_count() const;
};

// P~ = T R p with R expanded from R0; returns nullopt when the point lands
// behind the camera (z~ <= 0) or its floored pixel is outside the image.
std::optional<ProjectedPoint> project_point(const LidarPoint& p, const Calibration& calib);

// Scatters every in-view point to (floor h, floor w); pixel collisions keep
// the point with the smallest range d (first point wins exact ties).
ProjectedScan perspective_project_cloud(const PointCloud& cloud,
                                        const std::vector<int32_t>& labels,
                                        const Calibration& calib);

// Range-image baseline: row from elevation over [fov_down, fov_up] degrees,
// column from azimuth over [-pi, pi] decreasing left to right.
ProjectedScan spherical_project_cloud(const PointCloud& cloud,
                                      const std::vector<int32_t>& labels,
                                      double fov_up_deg, double fov_down_deg,
                                      int out_height, int out_width);

// Pixel predictions back to points; out-of-view points get kIgnoreLabel.
std::vector<int32_t> gather_point_predictions(const LabelImage& pred,
                                              const ProjectedScan& scan);

}  // namespace pmf::geom
