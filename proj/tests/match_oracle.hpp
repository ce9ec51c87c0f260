#pragma once

// Exhaustive assignment search over small matching instances.

#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "bat3d/iou.hpp"

namespace bat3d::testing {

struct Edge {
  TrackId gt, pred;
  double iou;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Visits every one-to-one assignment (each gt to one pred or none) whose
/// pairs all reach the threshold.
inline void for_each_assignment(std::span<const Box3D> gts, std::span<const Box3D> preds,
                                double threshold,
                                const std::function<void(const std::vector<Edge>&)>& visit) {
  std::vector<Edge> current;
  std::vector<bool> used(preds.size(), false);
  std::function<void(std::size_t)> rec = [&](std::size_t g) {
    if (g == gts.size()) {
      visit(current);
      return;
    }
    rec(g + 1);
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (used[p]) continue;
      const double iou = iou_3d(gts[g], preds[p]);
      if (iou < threshold) continue;
      used[p] = true;
      current.push_back({gts[g].track_id, preds[p].track_id, iou});
      rec(g + 1);
      current.pop_back();
      used[p] = false;
    }
  };
  rec(0);
}

inline bool ranks_before(const Edge& a, const Edge& b) {
  if (a.iou != b.iou) return a.iou > b.iou;
  if (a.gt != b.gt) return a.gt < b.gt;
  return a.pred < b.pred;
}

/// Assignment whose pairs, listed best first, are lexicographically best:
/// the strongest pair is as strong as possible, then the next, and so on.
inline std::vector<Edge> lexicographic_optimum(std::span<const Box3D> gts,
                                               std::span<const Box3D> preds, double threshold) {
  std::vector<Edge> best;
  bool have = false;
  for_each_assignment(gts, preds, threshold, [&](const std::vector<Edge>& cand) {
    std::vector<Edge> sorted = cand;
    std::sort(sorted.begin(), sorted.end(), ranks_before);
    if (!have) {
      best = sorted;
      have = true;
      return;
    }
    for (std::size_t i = 0; i < std::min(sorted.size(), best.size()); ++i) {
      if (sorted[i] == best[i]) continue;
      if (ranks_before(sorted[i], best[i])) best = sorted;
      return;
    }
    if (sorted.size() > best.size()) best = sorted;
  });
  return best;
}

/// Largest total IoU over all assignments.
inline double max_total_iou(std::span<const Box3D> gts, std::span<const Box3D> preds,
                            double threshold) {
  double best = 0.0;
  for_each_assignment(gts, preds, threshold, [&](const std::vector<Edge>& cand) {
    double sum = 0.0;
    for (const auto& e : cand) sum += e.iou;
    best = std::max(best, sum);
  });
  return best;
}

}  // namespace bat3d::testing
