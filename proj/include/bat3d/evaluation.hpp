#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bat3d/dataset_io.hpp"
#include "bat3d/iou.hpp"

namespace bat3d {

// IoU level reported separately from the matching threshold.
inline constexpr double kHighIouLevel = 0.6;

struct MatchPair {
  TrackId gt_track = 0;
  TrackId pred_track = 0;
  double iou = 0.0;
  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchResult {
  FrameIndex frame = 0;
  std::vector<MatchPair> pairs;  // in acceptance order, highest IoU first
  std::vector<TrackId> unmatched_gt;
  std::vector<TrackId> unmatched_pred;
  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

using PairFilter = std::function<bool(TrackId gt, TrackId pred)>;

/// Greedy matching: all pairs with IoU >= threshold, highest first, ties
/// broken by (gt track, pred track) ascending; a pair is taken when both
/// sides are still free. Accepts any threshold in [0, 1].
inline MatchResult greedy_match(std::span<const Box3D> gts, std::span<const Box3D> preds,
                                double threshold, FrameIndex frame = 0,
                                const PairFilter& allowed = {}) {
  struct Candidate {
    std::size_t gi, pi;
    double iou;
  };
  std::vector<Candidate> candidates;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (allowed && !allowed(gts[g].track_id, preds[p].track_id)) continue;
      const double iou = iou_3d(gts[g], preds[p]);
      if (iou >= threshold) candidates.push_back({g, p, iou});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (gts[a.gi].track_id != gts[b.gi].track_id) return gts[a.gi].track_id < gts[b.gi].track_id;
    return preds[a.pi].track_id < preds[b.pi].track_id;
  });

  MatchResult result;
  result.frame = frame;
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<bool> pred_used(preds.size(), false);
  for (const Candidate& c : candidates) {
    if (gt_used[c.gi] || pred_used[c.pi]) continue;
    gt_used[c.gi] = pred_used[c.pi] = true;
    result.pairs.push_back({gts[c.gi].track_id, preds[c.pi].track_id, c.iou});
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gt_used[g]) result.unmatched_gt.push_back(gts[g].track_id);
  }
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (!pred_used[p]) result.unmatched_pred.push_back(preds[p].track_id);
  }
  std::sort(result.unmatched_gt.begin(), result.unmatched_gt.end());
  std::sort(result.unmatched_pred.begin(), result.unmatched_pred.end());
  return result;
}

inline MatchResult match_frame(std::span<const Box3D> gts, std::span<const Box3D> preds,
                               double iou_threshold, FrameIndex frame = 0) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "IoU threshold must lie in (0, 1)", "iou_threshold");
  }
  return greedy_match(gts, preds, iou_threshold, frame);
}

// Undefined ratios (zero denominators) are reported as 0.
inline double precision(std::size_t tp, std::size_t fp) {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}
inline double recall(std::size_t tp, std::size_t fn) {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}
/// Harmonic mean of precision and recall.
inline double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

struct FrameMetrics {
  FrameIndex frame = 0;
  double mean_iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  friend bool operator==(const FrameMetrics&, const FrameMetrics&) = default;
};

struct AggregateMetrics {
  double mean_iou = 0.0;
  double frac_iou_above_0_6 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t gt_count = 0;
  std::map<ClassLabel, std::size_t> per_class_counts;  // candidate boxes per class
  friend bool operator==(const AggregateMetrics&, const AggregateMetrics&) = default;
};

struct MetricsReport {
  double iou_threshold = 0.6;
  bool track_consistent = false;
  std::vector<FrameMetrics> per_frame;
  AggregateMetrics aggregate;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct EvalOptions {
  double iou_threshold = 0.6;
  /// When set, a gt track may only ever match one pred track (and vice
  /// versa) over the whole sequence; the first accepted pair binds them.
  bool track_consistent = false;
};

/// Scores `pred` against the reference `gt` frame by frame.
///
/// The aggregate IoU is the mean over all matched pairs. The high-IoU
/// fraction re-matches every frame with no threshold and counts pairs with
/// IoU above 0.6, divided by the number of reference boxes.
inline MetricsReport evaluate_sequence(const AnnotationFile& pred, const AnnotationFile& gt,
                                       const EvalOptions& options = {}) {
  if (pred.sequence_id != gt.sequence_id) {
    throw Error(ErrorCode::SequenceMismatch,
                "candidate is '" + pred.sequence_id + "' but reference is '" + gt.sequence_id + "'");
  }
  if (!(options.iou_threshold > 0.0 && options.iou_threshold < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "IoU threshold must lie in (0, 1)", "iou_threshold");
  }
  std::set<FrameIndex> frames;
  for (const auto& [f, boxes] : pred.frames) frames.insert(f);
  for (const auto& [f, boxes] : gt.frames) frames.insert(f);

  static const std::vector<Box3D> kNone;
  auto boxes_of = [](const AnnotationFile& file, FrameIndex f) -> const std::vector<Box3D>& {
    const auto it = file.frames.find(f);
    return it == file.frames.end() ? kNone : it->second;
  };

  std::map<TrackId, TrackId> gt_to_pred;
  std::map<TrackId, TrackId> pred_to_gt;
  PairFilter consistent;
  if (options.track_consistent) {
    consistent = [&](TrackId g, TrackId p) {
      const auto gi = gt_to_pred.find(g);
      const auto pi = pred_to_gt.find(p);
      return (gi == gt_to_pred.end() || gi->second == p) &&
             (pi == pred_to_gt.end() || pi->second == g);
    };
  }

  MetricsReport report;
  report.iou_threshold = options.iou_threshold;
  report.track_consistent = options.track_consistent;
  AggregateMetrics& agg = report.aggregate;
  double iou_sum = 0.0;
  std::size_t above = 0;
  for (FrameIndex f : frames) {
    const auto& g = boxes_of(gt, f);
    const auto& p = boxes_of(pred, f);
    const MatchResult m = greedy_match(g, p, options.iou_threshold, f, consistent);
    if (options.track_consistent) {
      for (const auto& pair : m.pairs) {
        gt_to_pred.emplace(pair.gt_track, pair.pred_track);
        pred_to_gt.emplace(pair.pred_track, pair.gt_track);
      }
    }
    FrameMetrics fm;
    fm.frame = f;
    fm.tp = m.pairs.size();
    fm.fp = p.size() - fm.tp;
    fm.fn = g.size() - fm.tp;
    double frame_sum = 0.0;
    for (const auto& pair : m.pairs) frame_sum += pair.iou;
    fm.mean_iou = m.pairs.empty() ? 0.0 : frame_sum / static_cast<double>(m.pairs.size());
    fm.precision = precision(fm.tp, fm.fp);
    fm.recall = recall(fm.tp, fm.fn);
    fm.f1 = f1(fm.precision, fm.recall);
    report.per_frame.push_back(fm);

    iou_sum += frame_sum;
    agg.tp += fm.tp;
    agg.fp += fm.fp;
    agg.fn += fm.fn;
    agg.gt_count += g.size();
    for (const auto& pair : greedy_match(g, p, 0.0, f).pairs) {
      if (pair.iou > kHighIouLevel) ++above;
    }
    for (const auto& box : p) ++agg.per_class_counts[box.label];
  }
  agg.mean_iou = agg.tp == 0 ? 0.0 : iou_sum / static_cast<double>(agg.tp);
  agg.frac_iou_above_0_6 =
      agg.gt_count == 0 ? 0.0 : static_cast<double>(above) / static_cast<double>(agg.gt_count);
  agg.precision = precision(agg.tp, agg.fp);
  agg.recall = recall(agg.tp, agg.fn);
  agg.f1 = f1(agg.precision, agg.recall);
  return report;
}

inline Json to_json(const MetricsReport& report) {
  Json frames = Json::array();
  for (const auto& f : report.per_frame) {
    frames.push_back({{"frame", f.frame},
                      {"mean_iou", f.mean_iou},
                      {"precision", f.precision},
                      {"recall", f.recall},
                      {"f1", f.f1},
                      {"tp", f.tp},
                      {"fp", f.fp},
                      {"fn", f.fn}});
  }
  Json classes = Json::object();
  for (const auto& [label, count] : report.aggregate.per_class_counts) {
    classes[std::string(to_string(label))] = count;
  }
  const auto& a = report.aggregate;
  return Json{{"iou_threshold", report.iou_threshold},
              {"track_consistent", report.track_consistent},
              {"zero_denominator_value", 0},
              {"aggregate",
               {{"mean_iou", a.mean_iou},
                {"frac_iou_above_0_6", a.frac_iou_above_0_6},
                {"precision", a.precision},
                {"recall", a.recall},
                {"f1", a.f1},
                {"tp", a.tp},
                {"fp", a.fp},
                {"fn", a.fn},
                {"gt_count", a.gt_count},
                {"per_class_counts", classes}}},
              {"per_frame", frames}};
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_exact(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline constexpr std::string_view kMetricSeriesHeader = "frame,mean_iou,precision,recall,f1";

inline std::string metric_series_csv(const MetricsReport& report) {
  std::string out(kMetricSeriesHeader);
  out += '\n';
  for (const auto& f : report.per_frame) {
    out += std::to_string(f.frame) + ',' + format_exact(f.mean_iou) + ',' +
           format_exact(f.precision) + ',' + format_exact(f.recall) + ',' + format_exact(f.f1) +
           '\n';
  }
  return out;
}

inline void export_metric_series(const MetricsReport& report, const std::filesystem::path& path) {
  write_file_atomic(path, metric_series_csv(report));
}

}  // namespace bat3d
