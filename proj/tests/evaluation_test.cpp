#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "bat3d/evaluation.hpp"
#include "match_oracle.hpp"
#include "test_support.hpp"

using namespace bat3d;
using bat3d::testing::Edge;
using bat3d::testing::TempDir;
using bat3d::testing::random_box;
using bat3d::testing::uniform;

namespace {

Box3D box(double x, double y, Vec3 dims, ClassLabel label, TrackId track) {
  return Box3D{{x, y, 0}, dims, 0.0, label, track};
}

std::vector<Box3D> random_cluster(std::mt19937_64& rng, std::size_t n, TrackId first_id) {
  std::vector<Box3D> out;
  for (std::size_t i = 0; i < n; ++i) {
    Box3D b = random_box(rng, {}, 1.2);
    b.dims = {uniform(rng, 2, 4), uniform(rng, 1.5, 2.5), uniform(rng, 1.5, 2)};
    b.center.z = uniform(rng, -0.3, 0.3);
    b.track_id = first_id + static_cast<TrackId>(i);
    out.push_back(b);
  }
  return out;
}

}  // namespace

TEST(Ratios, HandFormulas) {
  EXPECT_DOUBLE_EQ(precision(2, 1), 2.0 / 3.0);
  EXPECT_EQ(recall(3, 1), 0.75);
  EXPECT_EQ(f1(0.5, 0.5), 0.5);
  EXPECT_EQ(precision(0, 0), 0.0);
  EXPECT_EQ(recall(0, 0), 0.0);
  EXPECT_EQ(f1(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(f1(1.0, 0.5), 2.0 / 3.0);
}

TEST(Ratios, F1Bounds) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double p = uniform(rng, 0, 1);
    const double r = uniform(rng, 0, 1);
    const double f = f1(p, r);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, (p + r) / 2 + 1e-15);
    EXPECT_GE(f, std::min(p, r) - 1e-15);
    EXPECT_DOUBLE_EQ(f1(p, p), p);
  }
}

TEST(MatchFrame, IdentityAndEmpty) {
  const std::vector<Box3D> gts = {box(0, 0, {4, 2, 1.5}, ClassLabel::Car, 0),
                                  box(10, 0, {1, 1, 2}, ClassLabel::Pedestrian, 1)};
  const MatchResult m = match_frame(gts, gts, 0.6);
  ASSERT_EQ(m.pairs.size(), 2u);
  for (const auto& p : m.pairs) {
    EXPECT_EQ(p.gt_track, p.pred_track);
    EXPECT_NEAR(p.iou, 1.0, 1e-12);
  }
  EXPECT_TRUE(m.unmatched_gt.empty());
  EXPECT_TRUE(m.unmatched_pred.empty());

  const MatchResult none = match_frame(gts, {}, 0.6);
  EXPECT_TRUE(none.pairs.empty());
  EXPECT_EQ(none.unmatched_gt, (std::vector<TrackId>{0, 1}));
  EXPECT_THROW(match_frame(gts, gts, 0.0), Error);
  EXPECT_THROW(match_frame(gts, gts, 1.0), Error);
}

TEST(MatchFrame, CrossingConfigurationTakesGlobalBestFirst) {
  // gt 0 overlaps both preds; pred 10 overlaps both gts. The best pair is
  // (gt 0, pred 10) which leaves gt 1 / pred 11 with a weak overlap.
  const std::vector<Box3D> gts = {box(0, 0, {4, 2, 2}, ClassLabel::Car, 0),
                                  box(1.6, 0, {4, 2, 2}, ClassLabel::Car, 1)};
  const std::vector<Box3D> preds = {box(0.4, 0, {4, 2, 2}, ClassLabel::Car, 10),
                                    box(-1.2, 0, {4, 2, 2}, ClassLabel::Car, 11)};
  const MatchResult m = match_frame(gts, preds, 0.2);
  ASSERT_GE(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0].gt_track, 0u);
  EXPECT_EQ(m.pairs[0].pred_track, 10u);
  EXPECT_NEAR(m.pairs[0].iou, 3.6 / 4.4, 1e-12);
  const auto oracle = bat3d::testing::lexicographic_optimum(gts, preds, 0.2);
  ASSERT_EQ(oracle.size(), m.pairs.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_EQ(oracle[i].gt, m.pairs[i].gt_track);
    EXPECT_EQ(oracle[i].pred, m.pairs[i].pred_track);
  }
}

TEST(MatchFrame, GreedyEqualsExhaustiveOnSmallInstances) {
  std::mt19937_64 rng(77);
  const double thresholds[] = {0.05, 0.25, 0.5, 0.6, 0.8};
  for (int trial = 0; trial < 2000; ++trial) {
    const auto gts = random_cluster(rng, rng() % 4, 0);
    const auto preds = random_cluster(rng, rng() % 4, 100);
    const double thr = thresholds[trial % 5];
    const MatchResult m = match_frame(gts, preds, thr);
    const auto oracle = bat3d::testing::lexicographic_optimum(gts, preds, thr);
    ASSERT_EQ(m.pairs.size(), oracle.size()) << "trial " << trial;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_EQ(m.pairs[i].gt_track, oracle[i].gt);
      EXPECT_EQ(m.pairs[i].pred_track, oracle[i].pred);
      EXPECT_EQ(m.pairs[i].iou, oracle[i].iou);
    }
  }
}

TEST(MatchFrame, SymmetricUnderSwap) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_cluster(rng, rng() % 5, 0);
    const auto b = random_cluster(rng, rng() % 5, 50);
    const MatchResult ab = match_frame(a, b, 0.3);
    const MatchResult ba = match_frame(b, a, 0.3);
    EXPECT_EQ(ab.unmatched_gt, ba.unmatched_pred);
    EXPECT_EQ(ab.unmatched_pred, ba.unmatched_gt);
    ASSERT_EQ(ab.pairs.size(), ba.pairs.size());
  }
}

TEST(MatchFrame, CountIdentities) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto g = random_cluster(rng, rng() % 6, 0);
    const auto p = random_cluster(rng, rng() % 6, 20);
    const MatchResult m = match_frame(g, p, 0.4);
    EXPECT_EQ(m.pairs.size() + m.unmatched_gt.size(), g.size());
    EXPECT_EQ(m.pairs.size() + m.unmatched_pred.size(), p.size());
    for (const auto& pair : m.pairs) EXPECT_GE(pair.iou, 0.4);
  }
}

TEST(EvaluateSequence, PredEqualsGt) {
  std::mt19937_64 rng(2);
  AnnotationFile gt;
  gt.sequence_id = "s";
  for (int f = 0; f < 20; ++f) {
    for (TrackId t = 0; t < 4; ++t) {
      gt.frames[f].push_back(box(15.0 * t + 0.1 * f, uniform(rng, -1, 1), {4, 2, 1.5},
                                 ClassLabel::Car, t));
    }
  }
  const MetricsReport r = evaluate_sequence(gt, gt);
  EXPECT_DOUBLE_EQ(r.aggregate.mean_iou, 1.0);
  EXPECT_EQ(r.aggregate.precision, 1.0);
  EXPECT_EQ(r.aggregate.recall, 1.0);
  EXPECT_EQ(r.aggregate.f1, 1.0);
  EXPECT_EQ(r.aggregate.frac_iou_above_0_6, 1.0);
  EXPECT_EQ(r.aggregate.per_class_counts.at(ClassLabel::Car), 80u);
  EXPECT_EQ(r.per_frame.size(), 20u);
}

TEST(EvaluateSequence, ShiftedBeyondThreshold) {
  AnnotationFile gt, pred;
  gt.sequence_id = pred.sequence_id = "s";
  for (int f = 0; f < 5; ++f) {
    gt.frames[f].push_back(box(0, 0, {4, 2, 1.5}, ClassLabel::Car, 0));
    pred.frames[f].push_back(box(3, 0, {4, 2, 1.5}, ClassLabel::Car, 0));
  }
  const MetricsReport r = evaluate_sequence(pred, gt);
  EXPECT_EQ(r.aggregate.precision, 0.0);
  EXPECT_EQ(r.aggregate.recall, 0.0);
  EXPECT_EQ(r.aggregate.f1, 0.0);
  EXPECT_EQ(r.aggregate.mean_iou, 0.0);
}

// Boxes placed by hand; expected numbers worked out by hand:
//   frame 0: identical car                      -> IoU 1
//   frame 1: car shifted 0.5 m (overlap 14/18)  -> IoU 7/9; gt pedestrian
//            missed; stray truck prediction
//   frame 2: car shifted 2 m (overlap 8/24)     -> IoU 1/3, below 0.6
TEST(EvaluateSequence, ToySequenceHandOracle) {
  AnnotationFile gt, pred;
  gt.sequence_id = pred.sequence_id = "toy";
  const Vec3 car_dims{4, 2, 2};
  gt.frames[0] = {box(0, 0, car_dims, ClassLabel::Car, 1)};
  gt.frames[1] = {box(1, 0, car_dims, ClassLabel::Car, 1),
                  box(10, 10, {1, 1, 2}, ClassLabel::Pedestrian, 2)};
  gt.frames[2] = {box(2, 0, car_dims, ClassLabel::Car, 1)};
  pred.frames[0] = {box(0, 0, car_dims, ClassLabel::Car, 10)};
  pred.frames[1] = {box(1.5, 0, car_dims, ClassLabel::Car, 10),
                    box(30, 0, {8, 2.5, 3}, ClassLabel::Truck, 12)};
  pred.frames[2] = {box(4, 0, car_dims, ClassLabel::Car, 10)};

  const MetricsReport r = evaluate_sequence(pred, gt, {0.6});
  ASSERT_EQ(r.per_frame.size(), 3u);
  EXPECT_DOUBLE_EQ(r.per_frame[0].mean_iou, 1.0);
  EXPECT_EQ(r.per_frame[0].f1, 1.0);
  EXPECT_NEAR(r.per_frame[1].mean_iou, 7.0 / 9.0, 1e-12);
  EXPECT_EQ(r.per_frame[1].precision, 0.5);
  EXPECT_EQ(r.per_frame[1].recall, 0.5);
  EXPECT_EQ(r.per_frame[1].f1, 0.5);
  EXPECT_EQ(r.per_frame[2].mean_iou, 0.0);
  EXPECT_EQ(r.per_frame[2].precision, 0.0);
  EXPECT_EQ(r.per_frame[2].f1, 0.0);

  EXPECT_EQ(r.aggregate.tp, 2u);
  EXPECT_EQ(r.aggregate.fp, 2u);
  EXPECT_EQ(r.aggregate.fn, 2u);
  EXPECT_EQ(r.aggregate.precision, 0.5);
  EXPECT_EQ(r.aggregate.recall, 0.5);
  EXPECT_EQ(r.aggregate.f1, 0.5);
  EXPECT_NEAR(r.aggregate.mean_iou, 8.0 / 9.0, 1e-12);
  EXPECT_EQ(r.aggregate.frac_iou_above_0_6, 0.5);
  EXPECT_EQ(r.aggregate.per_class_counts.at(ClassLabel::Car), 3u);
  EXPECT_EQ(r.aggregate.per_class_counts.at(ClassLabel::Truck), 1u);
}

TEST(EvaluateSequence, TrackConsistentMode) {
  AnnotationFile gt, pred;
  gt.sequence_id = pred.sequence_id = "s";
  for (int f = 0; f < 3; ++f) gt.frames[f] = {box(0, 0, {4, 2, 2}, ClassLabel::Car, 1)};
  pred.frames[0] = {box(0, 0, {4, 2, 2}, ClassLabel::Car, 7)};
  pred.frames[1] = {box(0, 0, {4, 2, 2}, ClassLabel::Car, 8)};  // identity switch
  pred.frames[2] = {box(0, 0, {4, 2, 2}, ClassLabel::Car, 7)};
  EXPECT_EQ(evaluate_sequence(pred, gt).aggregate.tp, 3u);
  const MetricsReport r = evaluate_sequence(pred, gt, {0.6, true});
  EXPECT_EQ(r.aggregate.tp, 2u);
  EXPECT_EQ(r.per_frame[1].tp, 0u);
  EXPECT_TRUE(r.track_consistent);
}

TEST(EvaluateSequence, Errors) {
  AnnotationFile a, b;
  a.sequence_id = "a";
  b.sequence_id = "b";
  try {
    evaluate_sequence(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SequenceMismatch);
  }
}

TEST(MetricSeries, RowCountsAndParseBack) {
  MetricsReport report;
  std::mt19937_64 rng(3);
  for (int f = 0; f < 300; ++f) {
    report.per_frame.push_back({f, uniform(rng, 0, 1), uniform(rng, 0, 1), 1.0 / 3.0, 0.0});
  }
  TempDir dir;
  export_metric_series(report, dir / "m.csv");
  std::ifstream in(dir / "m.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kMetricSeriesHeader);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 5u);
    const auto& f = report.per_frame[rows];
    EXPECT_EQ(std::stoll(cells[0]), f.frame);
    EXPECT_EQ(std::strtod(cells[1].c_str(), nullptr), f.mean_iou);
    EXPECT_EQ(std::strtod(cells[2].c_str(), nullptr), f.precision);
    EXPECT_EQ(std::strtod(cells[3].c_str(), nullptr), f.recall);
    EXPECT_EQ(std::strtod(cells[4].c_str(), nullptr), f.f1);
    ++rows;
  }
  EXPECT_EQ(rows, 300);

  export_metric_series(MetricsReport{}, dir / "empty.csv");
  EXPECT_EQ(read_file_bytes(dir / "empty.csv"), std::string(kMetricSeriesHeader) + "\n");
}
