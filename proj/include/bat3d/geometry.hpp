#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bat3d/error.hpp"

namespace bat3d {

using TrackId = std::uint32_t;
using FrameIndex = std::int64_t;

// Smallest box extent along any axis, in meters.
inline constexpr double kMinDimension = 0.01;
// Points closer to the image plane than this are treated as behind the camera.
inline constexpr double kNearPlane = 0.1;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 v) { return std::sqrt(dot(v, v)); }
inline bool is_finite(Vec3 v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

enum class ClassLabel { Car, Pedestrian, Motorcycle, Bicycle, Truck };

inline constexpr std::array<ClassLabel, 5> kAllClasses = {
    ClassLabel::Car, ClassLabel::Pedestrian, ClassLabel::Motorcycle,
    ClassLabel::Bicycle, ClassLabel::Truck};

inline std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::Car: return "CAR";
    case ClassLabel::Pedestrian: return "PEDESTRIAN";
    case ClassLabel::Motorcycle: return "MOTORCYCLE";
    case ClassLabel::Bicycle: return "BICYCLE";
    case ClassLabel::Truck: return "TRUCK";
  }
  return "UNKNOWN";
}

inline std::optional<ClassLabel> parse_class_label(std::string_view text) {
  for (ClassLabel label : kAllClasses) {
    if (to_string(label) == text) return label;
  }
  return std::nullopt;
}

/// Wraps an angle to (-pi, pi]. Already-wrapped values come back unchanged.
inline double wrap_angle(double radians) {
  double r = std::remainder(radians, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

/// Oriented 3D box. `dims` holds length (box x), width (box y) and height
/// (box z); `yaw` rotates the box about world +z.
struct Box3D {
  Vec3 center;
  Vec3 dims{1.0, 1.0, 1.0};
  double yaw = 0.0;
  ClassLabel label = ClassLabel::Car;
  TrackId track_id = 0;

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

inline bool is_valid(const Box3D& box) {
  return is_finite(box.center) && is_finite(box.dims) && box.dims.x > 0 &&
         box.dims.y > 0 && box.dims.z > 0 && std::isfinite(box.yaw) &&
         box.yaw > -std::numbers::pi && box.yaw <= std::numbers::pi;
}

/// Corner order: bottom face counter-clockwise seen from +z starting at the
/// (-l/2, -w/2) local corner, then the top face in the same order.
inline std::array<Vec3, 8> box_corners(const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = box.dims.x / 2.0;
  const double hw = box.dims.y / 2.0;
  const double hh = box.dims.z / 2.0;
  constexpr std::array<std::array<double, 2>, 4> kFootprint = {
      {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) {
    const double lx = kFootprint[i % 4][0] * hl;
    const double ly = kFootprint[i % 4][1] * hw;
    const double lz = i < 4 ? -hh : hh;
    corners[i] = {box.center.x + c * lx - s * ly, box.center.y + s * lx + c * ly,
                  box.center.z + lz};
  }
  return corners;
}

/// Footprint of the box in the ground plane, counter-clockwise.
inline std::array<Vec2, 4> bev_polygon(const Box3D& box) {
  const auto corners = box_corners(box);
  return {Vec2{corners[0].x, corners[0].y}, Vec2{corners[1].x, corners[1].y},
          Vec2{corners[2].x, corners[2].y}, Vec2{corners[3].x, corners[3].y}};
}

// ---------------------------------------------------------------------------
// Cameras and projection

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[r * 3 + c]; }
  friend bool operator==(const Mat3&, const Mat3&) = default;
};

inline Vec3 operator*(const Mat3& a, Vec3 v) {
  return {a.m[0] * v.x + a.m[1] * v.y + a.m[2] * v.z,
          a.m[3] * v.x + a.m[4] * v.y + a.m[5] * v.z,
          a.m[6] * v.x + a.m[7] * v.y + a.m[8] * v.z};
}

inline double determinant(const Mat3& a) {
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += r(i, k) * r(j, k);
      if (std::abs(d - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  }
  return std::abs(determinant(r) - 1.0) <= tol;
}

/// Rigid transform taking LiDAR-frame points into the camera frame.
struct RigidTransform {
  Mat3 rotation;
  Vec3 translation;

  Vec3 apply(Vec3 p) const { return rotation * p + translation; }
  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// Pinhole camera: intrinsic matrix K (upper triangular, K(2,2) = 1),
/// LiDAR-to-camera extrinsics, and image size in pixels. The camera frame
/// looks down +z with +x right and +y down.
struct CameraModel {
  std::string name;
  Mat3 intrinsics;
  RigidTransform extrinsics;
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double skew() const { return intrinsics(0, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Throws InvariantViolation naming the camera and the failing field.
inline void validate(const CameraModel& cam) {
  auto fail = [&](const std::string& field, const std::string& what) {
    throw Error(ErrorCode::InvariantViolation,
                "camera '" + cam.name + "': " + what, "cameras[" + cam.name + "]." + field);
  };
  if (cam.name.empty()) fail("name", "empty camera name");
  for (double v : cam.intrinsics.m) {
    if (!std::isfinite(v)) fail("intrinsics", "non-finite intrinsic value");
  }
  for (double v : cam.extrinsics.rotation.m) {
    if (!std::isfinite(v)) fail("rotation", "non-finite rotation value");
  }
  if (!is_finite(cam.extrinsics.translation)) fail("translation", "non-finite translation");
  if (cam.width <= 0 || cam.height <= 0) fail("width", "image size must be positive");
  const Mat3& k = cam.intrinsics;
  if (k(1, 0) != 0 || k(2, 0) != 0 || k(2, 1) != 0 || k(2, 2) != 1) {
    fail("intrinsics", "intrinsic matrix must be upper triangular with K[2][2] = 1");
  }
  if (!(cam.fx() > 0) || !(cam.fy() > 0)) fail("intrinsics", "focal lengths must be positive");
  if (cam.cx() < 0 || cam.cx() > cam.width || cam.cy() < 0 || cam.cy() > cam.height) {
    fail("intrinsics", "principal point outside the image");
  }
  if (!is_rotation(cam.extrinsics.rotation)) {
    fail("rotation", "rotation is not orthonormal with determinant +1");
  }
}

struct ImagePoint {
  double u = 0.0;
  double v = 0.0;
  friend bool operator==(ImagePoint, ImagePoint) = default;
};

struct BehindCamera {
  friend bool operator==(BehindCamera, BehindCamera) = default;
};

using PointProjection = std::variant<ImagePoint, BehindCamera>;

/// Projects a LiDAR-frame point. Pixels may fall outside the image.
inline PointProjection project_point(const CameraModel& cam, Vec3 p) {
  const Vec3 pc = cam.extrinsics.apply(p);
  if (!(pc.z > kNearPlane)) return BehindCamera{};
  return ImagePoint{cam.fx() * pc.x / pc.z + cam.skew() * pc.y / pc.z + cam.cx(),
                    cam.fy() * pc.y / pc.z + cam.cy()};
}

struct Rect {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double area() const { return (xmax - xmin) * (ymax - ymin); }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct ProjectedBox {
  std::string camera;
  std::vector<ImagePoint> corners_px;  // corners in front of the camera
  Rect rect;                           // clipped to the image
  int visible_corner_count = 0;        // in front of the camera and inside the image

  friend bool operator==(const ProjectedBox&, const ProjectedBox&) = default;
};

/// Returns nullopt when no corner is in front of the camera or the clipped
/// hull has no area. Corners behind the camera are dropped from the hull.
inline std::optional<ProjectedBox> project_box(const CameraModel& cam, const Box3D& box) {
  ProjectedBox out;
  out.camera = cam.name;
  const double w = cam.width;
  const double h = cam.height;
  for (const Vec3& corner : box_corners(box)) {
    const auto projected = project_point(cam, corner);
    if (const auto* px = std::get_if<ImagePoint>(&projected)) {
      out.corners_px.push_back(*px);
      if (px->u >= 0 && px->u <= w && px->v >= 0 && px->v <= h) ++out.visible_corner_count;
    }
  }
  if (out.corners_px.empty()) return std::nullopt;

  Rect hull{out.corners_px[0].u, out.corners_px[0].v, out.corners_px[0].u, out.corners_px[0].v};
  for (const ImagePoint& px : out.corners_px) {
    hull.xmin = std::min(hull.xmin, px.u);
    hull.ymin = std::min(hull.ymin, px.v);
    hull.xmax = std::max(hull.xmax, px.u);
    hull.ymax = std::max(hull.ymax, px.v);
  }
  out.rect = {std::clamp(hull.xmin, 0.0, w), std::clamp(hull.ymin, 0.0, h),
              std::clamp(hull.xmax, 0.0, w), std::clamp(hull.ymax, 0.0, h)};
  if (!(out.rect.xmax > out.rect.xmin) || !(out.rect.ymax > out.rect.ymin)) return std::nullopt;
  return out;
}

// ---------------------------------------------------------------------------
// Interpolation

/// Linear blend of center and dims, shortest-arc blend of yaw. t = 0 and
/// t = 1 return the endpoints unchanged.
inline Box3D interpolate_box(const Box3D& start, const Box3D& end, double t) {
  if (start.track_id != end.track_id || start.label != end.label) {
    throw Error(ErrorCode::InvalidPair, "interpolation endpoints differ in track or class");
  }
  if (!(t >= 0.0 && t <= 1.0)) {
    throw Error(ErrorCode::OutOfRange, "interpolation parameter outside [0, 1]");
  }
  if (t == 0.0) return start;
  if (t == 1.0) return end;

  auto lerp = [t](Vec3 a, Vec3 b) { return a + t * (b - a); };
  Box3D out = start;
  out.center = lerp(start.center, end.center);
  out.dims = lerp(start.dims, end.dims);
  out.dims = {std::max(out.dims.x, kMinDimension), std::max(out.dims.y, kMinDimension),
              std::max(out.dims.z, kMinDimension)};
  out.yaw = wrap_angle(start.yaw + t * wrap_angle(end.yaw - start.yaw));
  return out;
}

struct Keyframe {
  FrameIndex frame = 0;
  Box3D box;
  friend bool operator==(const Keyframe&, const Keyframe&) = default;
};

/// Boxes for every frame strictly between the two keyframes.
inline std::vector<Keyframe> interpolate_track(const Keyframe& start, const Keyframe& end) {
  if (start.frame >= end.frame) {
    throw Error(ErrorCode::Ordering, "start keyframe must precede end keyframe");
  }
  if (start.box.track_id != end.box.track_id || start.box.label != end.box.label) {
    throw Error(ErrorCode::InvalidPair, "keyframes belong to different tracks or classes");
  }
  std::vector<Keyframe> out;
  out.reserve(static_cast<std::size_t>(end.frame - start.frame - 1));
  const double span = static_cast<double>(end.frame - start.frame);
  for (FrameIndex f = start.frame + 1; f < end.frame; ++f) {
    const double t = static_cast<double>(f - start.frame) / span;
    out.push_back({f, interpolate_box(start.box, end.box, t)});
  }
  return out;
}

}  // namespace bat3d
