#include "pmf/geometry.hpp"

#include <cmath>
#include <limits>

namespace pmf::geom {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double LidarPoint::range() const { return std::sqrt(x * x + y * y + z * z); }

Mat3x3 Mat3x3::identity() {
  Mat3x3 r;
  r.at(0, 0) = r.at(1, 1) = r.at(2, 2) = 1.0;
  return r;
}

Mat3x4 Mat3x4::identity_projection() {
  Mat3x4 t;
  t.at(0, 0) = t.at(1, 1) = t.at(2, 2) = 1.0;
  return t;
}

size_t ProjectedScan::valid_count() const {
  size_t n = 0;
  for (uint8_t v : valid_mask) n += (v != 0);
  return n;
}

std::optional<ProjectedPoint> project_point(const LidarPoint& p, const Calibration& calib) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
    throw DataError("project_point: non-finite point coordinates");
  }
  if (calib.image_height <= 0 || calib.image_width <= 0) {
    throw ConfigError("project_point: calibration has no image size");
  }
  // R expanded to 4x4 with R(4,4) = 1 leaves the homogeneous 1 untouched,
  // so the rotated point is (R0 * xyz, 1).
  double rx = calib.R0.at(0, 0) * p.x + calib.R0.at(0, 1) * p.y + calib.R0.at(0, 2) * p.z;
  double ry = calib.R0.at(1, 0) * p.x + calib.R0.at(1, 1) * p.y + calib.R0.at(1, 2) * p.z;
  double rz = calib.R0.at(2, 0) * p.x + calib.R0.at(2, 1) * p.y + calib.R0.at(2, 2) * p.z;

  const Mat3x4& t = calib.T;
  double cx = t.at(0, 0) * rx + t.at(0, 1) * ry + t.at(0, 2) * rz + t.at(0, 3);
  double cy = t.at(1, 0) * rx + t.at(1, 1) * ry + t.at(1, 2) * rz + t.at(1, 3);
  double cz = t.at(2, 0) * rx + t.at(2, 1) * ry + t.at(2, 2) * rz + t.at(2, 3);

  if (cz <= 0.0) return std::nullopt;
  ProjectedPoint out;
  out.h = cx / cz;
  out.w = cy / cz;
  out.depth = cz;
  const double fh = std::floor(out.h);
  const double fw = std::floor(out.w);
  if (fh < 0.0 || fh >= calib.image_height || fw < 0.0 || fw >= calib.image_width) {
    return std::nullopt;
  }
  return out;
}

namespace {

ProjectedScan make_empty_scan(size_t num_points, int height, int width) {
  ProjectedScan scan;
  scan.height = height;
  scan.width = width;
  scan.features = Tensor::zeros({5, height, width});
  scan.pixel_to_point.assign(static_cast<size_t>(height) * width, kEmptyPixel);
  scan.valid_mask.assign(static_cast<size_t>(height) * width, 0);
  scan.label_image = LabelImage(height, width, kIgnoreLabel);
  scan.point_to_pixel.assign(num_points, PixelCoord{});
  return scan;
}

// Shared scatter: candidate pixel per point already resolved; keep min-d.
void scatter_points(ProjectedScan& scan, const PointCloud& cloud,
                    const std::vector<int32_t>& labels) {
  const int width = scan.width;
  std::vector<double> best_d(scan.pixel_to_point.size(),
                             std::numeric_limits<double>::infinity());
  auto& feat = scan.features.data();
  const size_t plane = scan.pixel_to_point.size();
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const PixelCoord px = scan.point_to_pixel[i];
    if (!px.in_view()) continue;
    const size_t idx = static_cast<size_t>(px.h) * width + px.w;
    const LidarPoint& p = cloud.points[i];
    const double d = p.range();
    if (d >= best_d[idx]) continue;
    best_d[idx] = d;
    scan.pixel_to_point[idx] = static_cast<int32_t>(i);
    scan.valid_mask[idx] = 1;
    feat[0 * plane + idx] = d;
    feat[1 * plane + idx] = p.x;
    feat[2 * plane + idx] = p.y;
    feat[3 * plane + idx] = p.z;
    feat[4 * plane + idx] = p.r;
    scan.label_image.ids[idx] = labels.empty() ? kIgnoreLabel : labels[i];
  }
}

void check_labels(const PointCloud& cloud, const std::vector<int32_t>& labels) {
  if (!labels.empty() && labels.size() != cloud.points.size()) {
    throw ShapeError("project_cloud: labels length does not match point count");
  }
}

}  // namespace

ProjectedScan perspective_project_cloud(const PointCloud& cloud,
                                        const std::vector<int32_t>& labels,
                                        const Calibration& calib) {
  check_labels(cloud, labels);
  ProjectedScan scan = make_empty_scan(cloud.size(), calib.image_height, calib.image_width);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (auto pp = project_point(cloud.points[i], calib)) {
      scan.point_to_pixel[i] = PixelCoord{static_cast<int32_t>(std::floor(pp->h)),
                                          static_cast<int32_t>(std::floor(pp->w))};
    }
  }
  scatter_points(scan, cloud, labels);
  return scan;
}

ProjectedScan spherical_project_cloud(const PointCloud& cloud,
                                      const std::vector<int32_t>& labels,
                                      double fov_up_deg, double fov_down_deg,
                                      int out_height, int out_width) {
  check_labels(cloud, labels);
  if (!(fov_up_deg > fov_down_deg)) {
    throw ConfigError("spherical_project_cloud: fov_up must exceed fov_down");
  }
  if (out_height <= 0 || out_width <= 0) {
    throw ConfigError("spherical_project_cloud: output size must be positive");
  }
  const double fov_up = fov_up_deg * kPi / 180.0;
  const double fov_down = fov_down_deg * kPi / 180.0;
  const double fov = fov_up - fov_down;

  ProjectedScan scan = make_empty_scan(cloud.size(), out_height, out_width);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const LidarPoint& p = cloud.points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw DataError("spherical_project_cloud: non-finite point coordinates");
    }
    const double d = p.range();
    if (d == 0.0) continue;  // undefined direction, skip
    const double yaw = std::atan2(p.y, p.x);
    const double pitch = std::asin(p.z / d);
    // Azimuth decreases left to right: yaw +pi/2 lands at a quarter width.
    const double col_f = 0.5 * (1.0 - yaw / kPi) * out_width;
    const double row_f = (1.0 - (pitch - fov_down) / fov) * out_height;
    const double fh = std::floor(row_f);
    const double fw = std::floor(col_f);
    if (fh < 0.0 || fh >= out_height || fw < 0.0 || fw >= out_width) continue;
    scan.point_to_pixel[i] =
        PixelCoord{static_cast<int32_t>(fh), static_cast<int32_t>(fw)};
  }
  scatter_points(scan, cloud, labels);
  return scan;
}

std::vector<int32_t> gather_point_predictions(const LabelImage& pred,
                                              const ProjectedScan& scan) {
  if (pred.height != scan.height || pred.width != scan.width) {
    throw ShapeError("gather_point_predictions: prediction image size mismatch");
  }
  std::vector<int32_t> out(scan.point_to_pixel.size(), kIgnoreLabel);
  for (size_t i = 0; i < out.size(); ++i) {
    const PixelCoord px = scan.point_to_pixel[i];
    if (px.in_view()) out[i] = pred.at(px.h, px.w);
  }
  return out;
}

}  // namespace pmf::geom
