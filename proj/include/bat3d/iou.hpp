#pragma once

#include <algorithm>
#include <span>
#include <tuple>
#include <vector>

#include "bat3d/geometry.hpp"

namespace bat3d {

// Clipped footprints smaller than this (m^2) count as empty.
inline constexpr double kAreaEpsilon = 1e-9;

/// Shoelace area, positive for counter-clockwise polygons.
inline double polygon_area(std::span<const Vec2> poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return twice / 2.0;
}

/// Sutherland-Hodgman: clips `subject` against the convex counter-clockwise
/// polygon `clip`.
inline std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  std::vector<Vec2> in;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    // Signed distance scaled by |b - a|; >= 0 means left of (inside) the edge.
    auto side = [&](Vec2 p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    in.swap(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2 p = in[i];
      const Vec2 q = in[(i + 1) % in.size()];
      const double dp = side(p);
      const double dq = side(q);
      if (dp >= 0) out.push_back(p);
      if ((dp >= 0) != (dq >= 0)) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

/// Area of the intersection of two boxes' ground footprints.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto pa = bev_polygon(a);
  const auto pb = bev_polygon(b);
  const double area = polygon_area(clip_convex(pa, pb));
  return area < kAreaEpsilon ? 0.0 : area;
}

inline double volume(const Box3D& box) { return box.dims.x * box.dims.y * box.dims.z; }

/// Volumetric IoU of two yaw-rotated boxes: clipped footprint area times
/// the overlap of the vertical extents.
inline double iou_3d(const Box3D& a, const Box3D& b) {
  auto key = [](const Box3D& box) {
    return std::tie(box.center.x, box.center.y, box.center.z, box.dims.x, box.dims.y,
                    box.dims.z, box.yaw);
  };
  // Fixed argument order makes the result exactly symmetric.
  if (key(b) < key(a)) return iou_3d(b, a);
  if (key(a) == key(b)) return 1.0;  // self-clipping leaves rounding noise

  const double top = std::min(a.center.z + a.dims.z / 2.0, b.center.z + b.dims.z / 2.0);
  const double bottom = std::max(a.center.z - a.dims.z / 2.0, b.center.z - b.dims.z / 2.0);
  const double overlap_z = std::max(0.0, top - bottom);
  if (overlap_z == 0.0) return 0.0;

  const double inter = bev_intersection_area(a, b) * overlap_z;
  if (inter == 0.0) return 0.0;
  const double uni = volume(a) + volume(b) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace bat3d
