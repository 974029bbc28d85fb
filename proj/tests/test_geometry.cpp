#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "pmf/geometry.hpp"
#include "pmf/rng.hpp"

using namespace pmf;
using namespace pmf::geom;

namespace {

Calibration identity_calib(int h, int w) {
  Calibration c;
  c.T = Mat3x4::identity_projection();
  c.R0 = Mat3x3::identity();
  c.image_height = h;
  c.image_width = w;
  return c;
}

Calibration random_calib(Rng& rng, int h, int w) {
  Calibration c;
  for (double& v : c.T.m) v = rng.uniform(-1.0, 1.0);
  for (double& v : c.R0.m) v = rng.uniform(-1.0, 1.0);
  c.image_height = h;
  c.image_width = w;
  return c;
}

// Dense matrix oracle: expand R to 4x4 explicitly and multiply through.
std::array<double, 3> project_oracle(const LidarPoint& p, const Calibration& c) {
  double r4[4][4] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r4[i][j] = c.R0.at(i, j);
  r4[3][3] = 1.0;
  const double hom[4] = {p.x, p.y, p.z, 1.0};
  double rotated[4] = {};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) rotated[i] += r4[i][j] * hom[j];
  std::array<double, 3> out = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) out[static_cast<size_t>(i)] += c.T.at(i, j) * rotated[j];
  return out;
}

// Quadratic scatter oracle: per pixel, scan every point and keep min range.
void scatter_oracle(const PointCloud& cloud, const std::vector<int32_t>& labels,
                    const Calibration& calib, std::vector<int32_t>& pixel_to_point) {
  pixel_to_point.assign(static_cast<size_t>(calib.image_height) * calib.image_width,
                        kEmptyPixel);
  for (int h = 0; h < calib.image_height; ++h) {
    for (int w = 0; w < calib.image_width; ++w) {
      double best = std::numeric_limits<double>::infinity();
      int32_t winner = kEmptyPixel;
      for (size_t i = 0; i < cloud.points.size(); ++i) {
        auto pp = project_point(cloud.points[i], calib);
        if (!pp) continue;
        if (static_cast<int>(std::floor(pp->h)) != h ||
            static_cast<int>(std::floor(pp->w)) != w) {
          continue;
        }
        const double d = cloud.points[i].range();
        if (d < best) {
          best = d;
          winner = static_cast<int32_t>(i);
        }
      }
      pixel_to_point[static_cast<size_t>(h) * calib.image_width + w] = winner;
    }
  }
  (void)labels;
}

}  // namespace

TEST_CASE("project_point under identity calibration") {
  Calibration c = identity_calib(4, 4);
  auto pp = project_point({2.0, 4.0, 2.0, 0.0}, c);
  REQUIRE(pp.has_value());
  CHECK(pp->h == 1.0);
  CHECK(pp->w == 2.0);
  CHECK(pp->depth == 2.0);
}

TEST_CASE("project_point rejects points behind the camera") {
  Calibration c = identity_calib(8, 8);
  CHECK_FALSE(project_point({1.0, 1.0, -3.0, 0.0}, c).has_value());
  CHECK_FALSE(project_point({1.0, 1.0, 0.0, 0.0}, c).has_value());
}

TEST_CASE("project_point errors on non-finite input") {
  Calibration c = identity_calib(8, 8);
  CHECK_THROWS_AS(project_point({std::nan(""), 0.0, 1.0, 0.0}, c), DataError);
}

TEST_CASE("project_point matches the dense matrix oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Calibration c = random_calib(rng, 64, 64);
    LidarPoint p{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0};
    const auto expect = project_oracle(p, c);
    auto pp = project_point(p, c);
    if (expect[2] <= 0.0) {
      CHECK_FALSE(pp.has_value());
      continue;
    }
    const double eh = expect[0] / expect[2];
    const double ew = expect[1] / expect[2];
    const bool in_view = std::floor(eh) >= 0 && std::floor(eh) < c.image_height &&
                         std::floor(ew) >= 0 && std::floor(ew) < c.image_width;
    CHECK(pp.has_value() == in_view);
    if (pp) {
      CHECK(pp->h == doctest::Approx(eh).epsilon(1e-12));
      CHECK(pp->w == doctest::Approx(ew).epsilon(1e-12));
      CHECK(pp->depth == doctest::Approx(expect[2]).epsilon(1e-12));
    }
  }
}

TEST_CASE("projection is invariant to positive scaling under identity calibration") {
  Rng rng(7);
  Calibration c = identity_calib(32, 32);
  for (int trial = 0; trial < 100; ++trial) {
    LidarPoint p{rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0), rng.uniform( 0.5, 20.0), 0.0};
    const double s = rng.uniform(0.1, 5.0);
    LidarPoint q{s * p.x, s * p.y, s * p.z, 0.0};
    auto a = project_point(p, c);
    auto b = project_point(q, c);
    if (!a || !b) continue;
    CHECK(a->h == doctest::Approx(b->h).epsilon(1e-12));
    CHECK(a->w == doctest::Approx(b->w).epsilon(1e-12));
  }
}

TEST_CASE("perspective projection of an empty cloud") {
  Calibration c = identity_calib(4, 6);
  ProjectedScan scan = perspective_project_cloud({}, {}, c);
  CHECK(scan.valid_count() == 0);
  for (double v : scan.features.data()) CHECK(v == 0.0);
  for (int32_t id : scan.label_image.ids) CHECK(id == kIgnoreLabel);
}

TEST_CASE("z-buffer keeps the nearest point by range") {
  // (3,4,0) has range 5 under identity R0/T... but z = 0 rejects it, so use
  // a calibration-free construction: both points land on pixel (1, 1).
  Calibration c = identity_calib(4, 4);
  PointCloud cloud;
  cloud.points.push_back({1.5 * 4, 1.5 * 4, 4.0, 0.25});  // range > 4
  cloud.points.push_back({1.5 * 2, 1.5 * 2, 2.0, 0.75});  // same pixel, nearer
  const double d0 = cloud.points[0].range();
  const double d1 = cloud.points[1].range();
  REQUIRE(d1 < d0);
  ProjectedScan scan = perspective_project_cloud(cloud, {3, 5}, c);
  CHECK(scan.valid_count() == 1);
  CHECK(scan.point_at(1, 1) == 1);
  CHECK(scan.label_image.at(1, 1) == 5);
  const size_t plane = 16;
  CHECK(scan.features.data()[0 * plane + 5] == doctest::Approx(d1).epsilon(1e-15));
  CHECK(scan.features.data()[4 * plane + 5] == 0.75);
}

TEST_CASE("range arithmetic behind the z-buffer rule") {
  // d = sqrt(3^2 + 4^2 + 0^2) = 5 for (3,4,0): the d=3 point must win.
  LidarPoint far_point{3.0, 4.0, 0.0, 0.0};
  CHECK(far_point.range() == 5.0);
  LidarPoint near_point{3.0, 0.0, 0.0, 0.0};
  CHECK(near_point.range() == 3.0);
}

TEST_CASE("perspective scatter matches the quadratic oracle") {
  Rng rng(55);
  Calibration c;
  c.R0 = Mat3x3::identity();
  c.T = Mat3x4::identity_projection();
  c.T.at(0, 0) = 10.0;
  c.T.at(0, 2) = 8.0;
  c.T.at(1, 1) = 10.0;
  c.T.at(1, 2) = 8.0;
  c.T.at(2, 2) = 1.0;
  c.image_height = 16;
  c.image_width = 16;
  PointCloud cloud;
  std::vector<int32_t> labels;
  for (int i = 0; i < 100; ++i) {
    const double z = rng.uniform(0.5, 10.0);
    cloud.points.push_back({rng.uniform(-1.0, 1.0) * z, rng.uniform(-1.0, 1.0) * z,
                            z, rng.uniform(0.0, 1.0)});
    labels.push_back(rng.uniform_int(0, 3));
  }
  ProjectedScan scan = perspective_project_cloud(cloud, labels, c);
  std::vector<int32_t> expect;
  scatter_oracle(cloud, labels, c, expect);
  CHECK(scan.pixel_to_point == expect);

  // feature channels hold the winning point exactly
  const size_t plane = 256;
  for (size_t p = 0; p < plane; ++p) {
    if (expect[p] == kEmptyPixel) {
      CHECK_FALSE(scan.valid_mask[p]);
      continue;
    }
    const LidarPoint& pt = cloud.points[static_cast<size_t>(expect[p])];
    CHECK(scan.features.data()[0 * plane + p] == doctest::Approx(pt.range()).epsilon(1e-12));
    CHECK(scan.features.data()[1 * plane + p] == pt.x);
    CHECK(scan.features.data()[2 * plane + p] == pt.y);
    CHECK(scan.features.data()[3 * plane + p] == pt.z);
    CHECK(scan.features.data()[4 * plane + p] == pt.r);
    CHECK(scan.label_image.ids[p] == labels[static_cast<size_t>(expect[p])]);
  }
}

TEST_CASE("projection idempotence and invariants") {
  Rng rng(21);
  Calibration c = identity_calib(12, 12);
  PointCloud cloud;
  std::vector<int32_t> labels;
  for (int i = 0; i < 200; ++i) {
    const double z = rng.uniform(0.2, 8.0);
    cloud.points.push_back({rng.uniform(0.0, 11.0) * z, rng.uniform(0.0, 11.0) * z, z,
                            rng.uniform(0.0, 1.0)});
    labels.push_back(rng.uniform_int(0, 2));
  }
  ProjectedScan a = perspective_project_cloud(cloud, labels, c);
  ProjectedScan b = perspective_project_cloud(cloud, labels, c);
  CHECK(a.features.data() == b.features.data());
  CHECK(a.pixel_to_point == b.pixel_to_point);
  CHECK(a.valid_mask == b.valid_mask);

  const size_t plane = a.valid_mask.size();
  for (size_t p = 0; p < plane; ++p) {
    CHECK((a.valid_mask[p] != 0) == (a.pixel_to_point[p] != kEmptyPixel));
    if (a.valid_mask[p]) {
      const double d = a.features.data()[0 * plane + p];
      const double x = a.features.data()[1 * plane + p];
      const double y = a.features.data()[2 * plane + p];
      const double z = a.features.data()[3 * plane + p];
      CHECK(std::abs(d - std::sqrt(x * x + y * y + z * z)) < 1e-9);
    } else {
      for (int ch = 0; ch < 5; ++ch) CHECK(a.features.data()[ch * plane + p] == 0.0);
      CHECK(a.label_image.ids[p] == kIgnoreLabel);
    }
  }

  // winner round trip: pixel_to_point(point_to_pixel(i)) == i for winners
  for (size_t p = 0; p < plane; ++p) {
    const int32_t winner = a.pixel_to_point[p];
    if (winner == kEmptyPixel) continue;
    const PixelCoord px = a.point_to_pixel[static_cast<size_t>(winner)];
    REQUIRE(px.in_view());
    CHECK(a.point_at(px.h, px.w) == winner);
  }
}

TEST_CASE("spherical projection center and quarter-width anchors") {
  PointCloud cloud;
  cloud.points.push_back({5.0, 0.0, 0.0, 0.5});  // optical axis
  ProjectedScan scan = spherical_project_cloud(cloud, {1}, 15.0, -15.0, 16, 32);
  REQUIRE(scan.point_to_pixel[0].in_view());
  CHECK(scan.point_to_pixel[0].h == 8);   // center row
  CHECK(scan.point_to_pixel[0].w == 16);  // center column

  PointCloud left;
  left.points.push_back({0.0, 5.0, 0.0, 0.5});  // azimuth +pi/2
  ProjectedScan s2 = spherical_project_cloud(left, {1}, 15.0, -15.0, 16, 32);
  REQUIRE(s2.point_to_pixel[0].in_view());
  CHECK(s2.point_to_pixel[0].w == 8);  // quarter width
}

TEST_CASE("spherical projection skips zero-range points and stores ranges") {
  Rng rng(61);
  PointCloud cloud;
  std::vector<int32_t> labels;
  cloud.points.push_back({0.0, 0.0, 0.0, 0.9});  // degenerate
  labels.push_back(2);
  for (int i = 0; i < 300; ++i) {
    cloud.points.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10),
                            rng.uniform(-2, 2), rng.uniform(0, 1)});
    labels.push_back(rng.uniform_int(0, 3));
  }
  ProjectedScan scan = spherical_project_cloud(cloud, labels, 20.0, -20.0, 24, 48);
  CHECK_FALSE(scan.point_to_pixel[0].in_view());
  const size_t plane = scan.valid_mask.size();
  for (size_t p = 0; p < plane; ++p) {
    if (!scan.valid_mask[p]) continue;
    const LidarPoint& pt = cloud.points[static_cast<size_t>(scan.pixel_to_point[p])];
    CHECK(scan.features.data()[p] == doctest::Approx(pt.range()).epsilon(1e-12));
  }
  CHECK_THROWS_AS(spherical_project_cloud(cloud, labels, -5.0, 5.0, 8, 8), ConfigError);
}

TEST_CASE("gather_point_predictions") {
  Rng rng(71);
  Calibration c = identity_calib(8, 8);
  PointCloud cloud;
  std::vector<int32_t> labels;
  for (int i = 0; i < 60; ++i) {
    const double z = rng.uniform(0.5, 6.0);
    cloud.points.push_back({rng.uniform(0.0, 7.9) * z, rng.uniform(0.0, 7.9) * z, z, 0.1});
    labels.push_back(rng.uniform_int(0, 3));
  }
  cloud.points.push_back({1.0, 1.0, -2.0, 0.0});  // out of view
  labels.push_back(1);
  ProjectedScan scan = perspective_project_cloud(cloud, labels, c);

  LabelImage constant(8, 8, 2);
  auto gathered = gather_point_predictions(constant, scan);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (scan.point_to_pixel[i].in_view()) CHECK(gathered[i] == 2);
    else CHECK(gathered[i] == kIgnoreLabel);
  }

  // round trip: predicting the label image recovers labels of winners
  auto roundtrip = gather_point_predictions(scan.label_image, scan);
  for (size_t p = 0; p < scan.pixel_to_point.size(); ++p) {
    const int32_t winner = scan.pixel_to_point[p];
    if (winner == kEmptyPixel) continue;
    CHECK(roundtrip[static_cast<size_t>(winner)] == labels[static_cast<size_t>(winner)]);
  }

  // random prediction equals an index-by-index lookup
  LabelImage pred(8, 8);
  for (auto& v : pred.ids) v = rng.uniform_int(0, 3);
  auto got = gather_point_predictions(pred, scan);
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const PixelCoord px = scan.point_to_pixel[i];
    CHECK(got[i] == (px.in_view() ? pred.at(px.h, px.w) : kIgnoreLabel));
  }

  LabelImage bad(4, 4);
  CHECK_THROWS_AS(gather_point_predictions(bad, scan), ShapeError);
}
