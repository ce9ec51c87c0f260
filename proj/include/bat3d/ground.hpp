#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "bat3d/geometry.hpp"

namespace bat3d {

/// {p : normal . p + offset = 0}, normal of unit length.
struct Plane {
  Vec3 normal{0.0, 0.0, 1.0};
  double offset = 0.0;

  double signed_distance(Vec3 p) const { return dot(normal, p) + offset; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

struct RansacParams {
  int iterations = 200;
  double inlier_distance = 0.15;   // meters
  double min_inlier_fraction = 0.3;
};

struct GroundFit {
  Plane plane;
  std::vector<std::size_t> inliers;  // ascending
};

namespace detail {

inline std::vector<std::size_t> plane_inliers(std::span<const Vec3> points, const Plane& plane,
                                              double max_distance) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (std::abs(plane.signed_distance(points[i])) <= max_distance) idx.push_back(i);
  }
  return idx;
}

inline Plane oriented_up(Vec3 n, Vec3 through) {
  if (n.z < 0) n = -1.0 * n;
  return {n, -dot(n, through)};
}

/// Total least squares plane through the selected points.
inline std::optional<Plane> refit(std::span<const Vec3> points, std::span<const std::size_t> idx) {
  if (idx.size() < 3) return std::nullopt;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (std::size_t i : idx) mean += Eigen::Vector3d(points[i].x, points[i].y, points[i].z);
  mean /= static_cast<double>(idx.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i : idx) {
    const Eigen::Vector3d d = Eigen::Vector3d(points[i].x, points[i].y, points[i].z) - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) return std::nullopt;
  Eigen::Vector3d n = solver.eigenvectors().col(0).normalized();
  if (!n.allFinite()) return std::nullopt;
  return oriented_up({n.x(), n.y(), n.z()}, {mean.x(), mean.y(), mean.z()});
}

}  // namespace detail

/// RANSAC ground plane. Sampling uses std::minstd_rand, whose output
/// sequence is fixed by the standard, so a seed gives the same fit on any
/// platform. The winning hypothesis is refined by a least-squares fit over
/// its inliers.
inline GroundFit detect_ground_plane(std::span<const Vec3> points, std::uint32_t seed,
                                     const RansacParams& params = {}) {
  const std::size_t n = points.size();
  if (n < 3) throw Error(ErrorCode::InsufficientData, "ground detection needs at least 3 points");
  const auto min_inliers = static_cast<std::size_t>(
      std::ceil(params.min_inlier_fraction * static_cast<double>(n)));

  std::minstd_rand rng(seed);
  std::optional<Plane> best;
  std::size_t best_count = 0;
  for (int it = 0; it < params.iterations; ++it) {
    const std::size_t i = rng() % n;
    std::size_t j = rng() % n;
    std::size_t k = rng() % n;
    if (i == j || j == k || i == k) continue;
    const Vec3 normal = cross(points[j] - points[i], points[k] - points[i]);
    const double len = norm(normal);
    if (!(len > 1e-12)) continue;
    const Plane candidate = detail::oriented_up((1.0 / len) * normal, points[i]);
    std::size_t count = 0;
    for (const Vec3& p : points) {
      if (std::abs(candidate.signed_distance(p)) <= params.inlier_distance) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best = candidate;
    }
  }
  if (!best || best_count < min_inliers || best_count < 3) {
    throw Error(ErrorCode::NoPlaneFound, "no plane hypothesis reached the inlier minimum");
  }

  GroundFit fit{*best, detail::plane_inliers(points, *best, params.inlier_distance)};
  if (auto refined = detail::refit(points, fit.inliers)) {
    auto refined_inliers = detail::plane_inliers(points, *refined, params.inlier_distance);
    if (refined_inliers.size() >= fit.inliers.size()) {
      fit = {*refined, std::move(refined_inliers)};
    }
  }
  return fit;
}

/// Indices of points strictly more than `margin` above the plane.
inline std::vector<std::size_t> above_ground_indices(std::span<const Vec3> points,
                                                     const Plane& plane, double margin) {
  if (!(margin >= 0.0)) throw Error(ErrorCode::OutOfRange, "ground margin must be >= 0");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (plane.signed_distance(points[i]) > margin) idx.push_back(i);
  }
  return idx;
}

inline std::vector<Vec3> remove_ground(std::span<const Vec3> points, const Plane& plane,
                                       double margin) {
  std::vector<Vec3> kept;
  for (std::size_t i : above_ground_indices(points, plane, margin)) kept.push_back(points[i]);
  return kept;
}

}  // namespace bat3d
