#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "bat3d/geometry.hpp"
#include "test_support.hpp"

using namespace bat3d;
using bat3d::testing::random_box;
using bat3d::testing::uniform;

namespace {

constexpr double kPi = std::numbers::pi;

Box3D unit_cube(double yaw = 0.0) { return Box3D{{0, 0, 0}, {1, 1, 1}, yaw}; }

CameraModel pinhole(double f, double cx, double cy, int w, int h) {
  CameraModel cam;
  cam.name = "cam";
  cam.intrinsics.m = {f, 0, cx, 0, f, cy, 0, 0, 1};
  cam.width = w;
  cam.height = h;
  return cam;
}

void expect_vec(Vec3 got, Vec3 want, double tol) {
  EXPECT_NEAR(got.x, want.x, tol);
  EXPECT_NEAR(got.y, want.y, tol);
  EXPECT_NEAR(got.z, want.z, tol);
}

}  // namespace

TEST(WrapAngle, RangeIsHalfOpen) {
  EXPECT_EQ(wrap_angle(kPi), kPi);
  EXPECT_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_EQ(wrap_angle(0.25), 0.25);
  EXPECT_NEAR(wrap_angle(7.0), 7.0 - 2 * kPi, 1e-15);
}

TEST(BoxCorners, UnitCubeAtOrigin) {
  const auto corners = box_corners(unit_cube());
  const std::array<Vec3, 8> want = {{{-0.5, -0.5, -0.5}, {0.5, -0.5, -0.5}, {0.5, 0.5, -0.5},
                                     {-0.5, 0.5, -0.5}, {-0.5, -0.5, 0.5}, {0.5, -0.5, 0.5},
                                     {0.5, 0.5, 0.5}, {-0.5, 0.5, 0.5}}};
  for (int i = 0; i < 8; ++i) expect_vec(corners[i], want[i], 0.0);
}

TEST(BoxCorners, QuarterTurnKeepsVertexSet) {
  auto key = [](Vec3 v) {
    return std::array<long, 3>{std::lround(v.x * 1e9), std::lround(v.y * 1e9),
                               std::lround(v.z * 1e9)};
  };
  auto a = box_corners(unit_cube());
  auto b = box_corners(unit_cube(kPi / 2));
  std::vector<std::array<long, 3>> ka, kb;
  for (auto v : a) ka.push_back(key(v));
  for (auto v : b) kb.push_back(key(v));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  EXPECT_EQ(ka, kb);
}

TEST(BoxCorners, RotatedBoxMatchesHandComputation) {
  // dims (4, 2, 1.5), yaw pi/6, center (10, 5, 0); cos = sqrt(3)/2, sin = 1/2.
  const Box3D box{{10, 5, 0}, {4, 2, 1.5}, kPi / 6};
  const auto c = box_corners(box);
  const std::array<Vec2, 4> foot = {{{8.767949192431123, 3.133974596215561},
                                     {12.232050807568877, 5.133974596215562},
                                     {11.232050807568877, 6.866025403784438},
                                     {7.767949192431123, 4.866025403784438}}};
  for (int i = 0; i < 8; ++i) {
    expect_vec(c[i], {foot[i % 4].x, foot[i % 4].y, i < 4 ? -0.75 : 0.75}, 1e-12);
  }
}

TEST(BoxCorners, CentroidAndEdgeLengthsProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const Box3D box = random_box(rng, {uniform(rng, -50, 50), uniform(rng, -50, 50), 0});
    const auto c = box_corners(box);
    Vec3 sum{};
    for (auto v : c) sum = sum + v;
    expect_vec((1.0 / 8.0) * sum, box.center, 1e-12);
    EXPECT_NEAR(norm(c[1] - c[0]), box.dims.x, 1e-12);
    EXPECT_NEAR(norm(c[3] - c[0]), box.dims.y, 1e-12);
    EXPECT_NEAR(norm(c[4] - c[0]), box.dims.z, 1e-12);
    // Bottom face counter-clockwise seen from +z.
    EXPECT_GT(cross(c[1] - c[0], c[2] - c[1]).z, 0.0);
  }
}

TEST(BevPolygon, Cases) {
  const auto unit = bev_polygon(unit_cube());
  EXPECT_EQ(unit[0], (Vec2{-0.5, -0.5}));
  EXPECT_EQ(unit[2], (Vec2{0.5, 0.5}));

  Box3D diamond{{0, 0, 0}, {std::sqrt(2.0), std::sqrt(2.0), 1}, kPi / 4};
  const auto d = bev_polygon(diamond);
  const std::array<Vec2, 4> want = {{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(d[i].x, want[i].x, 1e-12);
    EXPECT_NEAR(d[i].y, want[i].y, 1e-12);
  }

  const auto r = bev_polygon(Box3D{{0, 0, 0}, {4, 2, 1}, 0.3});
  const std::array<Vec2, 4> hand = {{{-1.6151527715898724, -1.546376902448285},
                                     {2.2061931849125513, -0.3642960758029269},
                                     {1.6151527715898724, 1.546376902448285},
                                     {-2.2061931849125513, 0.3642960758029269}}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(r[i].x, hand[i].x, 1e-12);
    EXPECT_NEAR(r[i].y, hand[i].y, 1e-12);
  }
}

TEST(CameraValidation, RejectsBadModels) {
  CameraModel cam = pinhole(1000, 500, 400, 1000, 800);
  EXPECT_NO_THROW(validate(cam));

  CameraModel skewed = cam;
  skewed.intrinsics.m[1] = 2.5;
  EXPECT_NO_THROW(validate(skewed));

  CameraModel bad_rot = cam;
  bad_rot.extrinsics.rotation.m[0] = 1.1;
  try {
    validate(bad_rot);
    FAIL() << "expected invariant violation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvariantViolation);
    EXPECT_EQ(e.field(), "cameras[cam].rotation");
  }

  CameraModel reflection = cam;
  reflection.extrinsics.rotation.m = {-1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_THROW(validate(reflection), Error);

  CameraModel bad_f = cam;
  bad_f.intrinsics.m[0] = 0;
  EXPECT_THROW(validate(bad_f), Error);

  CameraModel bad_pp = cam;
  bad_pp.intrinsics.m[2] = 1001;
  EXPECT_THROW(validate(bad_pp), Error);
}

TEST(ProjectPoint, OpticalAxisHitsPrincipalPoint) {
  const auto cam = pinhole(1234.5, 640.25, 360.75, 1280, 720);
  const auto px = std::get<ImagePoint>(project_point(cam, {0, 0, 5}));
  EXPECT_EQ(px.u, 640.25);
  EXPECT_EQ(px.v, 360.75);
}

TEST(ProjectPoint, PinholeSubstitution) {
  const auto cam = pinhole(1000, 500, 500, 1000, 1000);
  const auto px = std::get<ImagePoint>(project_point(cam, {1, 0, 10}));
  EXPECT_EQ(px.u, 600.0);
  EXPECT_EQ(px.v, 500.0);
}

TEST(ProjectPoint, BehindAndNearPlane) {
  const auto cam = pinhole(1000, 500, 500, 1000, 1000);
  EXPECT_TRUE(std::holds_alternative<BehindCamera>(project_point(cam, {0, 0, -1})));
  EXPECT_TRUE(std::holds_alternative<BehindCamera>(project_point(cam, {0, 0, kNearPlane})));
  EXPECT_TRUE(std::holds_alternative<ImagePoint>(project_point(cam, {0, 0, 0.10001})));
}

TEST(ProjectPoint, UsesExtrinsics) {
  auto cam = pinhole(1000, 500, 500, 1000, 1000);
  // LiDAR x forward maps to camera z.
  cam.extrinsics.rotation.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  cam.extrinsics.translation = {0, 0, 0};
  const auto px = std::get<ImagePoint>(project_point(cam, {10, -1, 0}));
  EXPECT_EQ(px.u, 600.0);
  EXPECT_EQ(px.v, 500.0);
}

TEST(ProjectBox, CenteredBoxIsSymmetric) {
  const auto cam = pinhole(1000, 500, 400, 1000, 800);
  const auto pb = project_box(cam, Box3D{{0, 0, 10}, {2, 2, 2}, 0});
  ASSERT_TRUE(pb.has_value());
  EXPECT_NEAR((pb->rect.xmin + pb->rect.xmax) / 2, 500, 1e-9);
  EXPECT_NEAR((pb->rect.ymin + pb->rect.ymax) / 2, 400, 1e-9);
  EXPECT_EQ(pb->corners_px.size(), 8u);
  EXPECT_EQ(pb->visible_corner_count, 8);
  EXPECT_EQ(pb->camera, "cam");
}

TEST(ProjectBox, BehindCameraIsNotVisible) {
  const auto cam = pinhole(1000, 500, 400, 1000, 800);
  EXPECT_FALSE(project_box(cam, Box3D{{0, 0, -10}, {2, 2, 2}, 0}).has_value());
}

TEST(ProjectBox, ClippedAtImageBorder) {
  // Corners span x in [3.5, 5.5], y in [-1, 1], depth in [9, 11].
  const auto cam = pinhole(1000, 500, 400, 1000, 800);
  const auto pb = project_box(cam, Box3D{{4.5, 0, 10}, {2, 2, 2}, 0});
  ASSERT_TRUE(pb.has_value());
  EXPECT_NEAR(pb->rect.xmin, 500 + 3500.0 / 11.0, 1e-9);
  EXPECT_EQ(pb->rect.xmax, 1000.0);
  EXPECT_NEAR(pb->rect.ymin, 400 - 1000.0 / 9.0, 1e-9);
  EXPECT_NEAR(pb->rect.ymax, 400 + 1000.0 / 9.0, 1e-9);
  // The x = 5.5 corners at depth 11 land exactly on the right border.
  EXPECT_EQ(pb->visible_corner_count, 6);
}

TEST(ProjectBox, EntirelyOutsideImageIsNotVisible) {
  const auto cam = pinhole(1000, 500, 400, 1000, 800);
  EXPECT_FALSE(project_box(cam, Box3D{{40, 0, 10}, {2, 2, 2}, 0}).has_value());
}

TEST(ProjectBox, PartiallyBehindUsesFrontCornersOnly) {
  const auto cam = pinhole(1000, 500, 400, 1000, 800);
  const auto pb = project_box(cam, Box3D{{0, 0, 0.5}, {1, 1, 2}, 0});
  ASSERT_TRUE(pb.has_value());
  EXPECT_EQ(pb->corners_px.size(), 4u);
}

TEST(InterpolateBox, IdentityAndEndpoints) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    Box3D s = random_box(rng);
    Box3D e = random_box(rng);
    e.track_id = s.track_id;
    e.label = s.label;
    EXPECT_EQ(interpolate_box(s, e, 0.0), s);
    EXPECT_EQ(interpolate_box(s, e, 1.0), e);
    EXPECT_EQ(interpolate_box(s, s, uniform(rng, 0, 1)), s);
  }
}

TEST(InterpolateBox, MidpointAndSeam) {
  Box3D s{{0, 0, 0}, {1, 1, 1}, 3.0};
  Box3D e{{10, 0, 0}, {1, 1, 1}, -3.0};
  const Box3D mid = interpolate_box(s, e, 0.5);
  EXPECT_EQ(mid.center, (Vec3{5, 0, 0}));
  // Shortest arc from 3.0 to -3.0 passes through pi, not 0.
  EXPECT_NEAR(std::abs(mid.yaw), kPi, 1e-12);
}

TEST(InterpolateBox, DimsClampAndErrors) {
  Box3D s{{0, 0, 0}, {1, 1, 1}, 0};
  Box3D e = s;
  e.dims = {0.001, 1, 1};
  // Endpoint values are returned untouched; interior values are clamped.
  Box3D almost = s;
  almost.dims = {kMinDimension, 1, 1};
  EXPECT_GE(interpolate_box(almost, almost, 0.5).dims.x, kMinDimension);

  Box3D other = s;
  other.track_id = 9;
  EXPECT_THROW(interpolate_box(s, other, 0.5), Error);
  other = s;
  other.label = ClassLabel::Truck;
  try {
    interpolate_box(s, other, 0.5);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::InvalidPair);
  }
  EXPECT_THROW(interpolate_box(s, s, 1.5), Error);
}

TEST(InterpolateBox, ShortestArcProperty) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    Box3D s = random_box(rng);
    Box3D e = random_box(rng);
    e.track_id = s.track_id;
    e.label = s.label;
    const double t = uniform(rng, 0, 1);
    const Box3D m = interpolate_box(s, e, t);
    // Angle travelled so far is t times an arc of at most pi.
    EXPECT_LE(std::abs(wrap_angle(m.yaw - s.yaw)), t * kPi + 1e-12);
    EXPECT_GT(m.yaw, -kPi);
    EXPECT_LE(m.yaw, kPi);
  }
}

TEST(InterpolateTrack, CountsAndSchedule) {
  Box3D a{{0, 0, 0}, {1, 1, 1}, 0};
  Box3D b{{4, 0, 0}, {1, 1, 1}, 0};
  EXPECT_EQ(interpolate_track({0, a}, {10, a}).size(), 9u);
  EXPECT_TRUE(interpolate_track({4, a}, {5, a}).empty());

  const auto track = interpolate_track({0, a}, {4, b});
  ASSERT_EQ(track.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(track[i].frame, i + 1);
    EXPECT_EQ(track[i].box.center, (Vec3{i + 1.0, 0, 0}));
  }
  try {
    interpolate_track({5, a}, {5, a});
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::Ordering);
  }
}
