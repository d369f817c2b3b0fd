#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mspad/geometry.hpp"
#include "oracles.hpp"

using namespace mspad;

namespace {

ScoredBox sb(BBox b, int cls, double score) { return {b, ClassId{cls}, score, {}}; }

}  // namespace

TEST(Iou, IdentityAndDisjoint) {
  const BBox b{3, 4, 17, 29};
  EXPECT_DOUBLE_EQ(iou(b, b), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {20, 20, 30, 30}), 0.0);
}

TEST(Iou, HalfShiftMatchesRasterOracle) {
  const BBox a{0, 0, 10, 10}, b{5, 0, 15, 10};
  // Raster oracle frozen at pitch 0.25: 800 shared cells of 2400 in the union.
  const double expected = oracle::raster_iou(a, b, 0.25);
  EXPECT_DOUBLE_EQ(expected, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 50.0 / 150.0);
  EXPECT_NEAR(iou(a, b), expected, 1e-12);
}

TEST(Iou, DegeneratePairIsZero) {
  EXPECT_EQ(iou({1, 1, 1, 5}, {1, 1, 1, 5}), 0.0);
  EXPECT_EQ(iou({0, 0, 0, 0}, {0, 0, 10, 10}), 0.0);
}

TEST(Iou, PropertiesOnRandomBoxes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> c(0, 30), s(0, 15), d(-50, 50);
  for (int i = 0; i < 2000; ++i) {
    const BBox a{double(c(rng)), double(c(rng)), 0, 0};
    const BBox A{a.x_min, a.y_min, a.x_min + s(rng), a.y_min + s(rng)};
    const BBox B0{double(c(rng)), double(c(rng)), 0, 0};
    const BBox B{B0.x_min, B0.y_min, B0.x_min + s(rng), B0.y_min + s(rng)};
    const double ab = iou(A, B);
    EXPECT_EQ(ab, iou(B, A));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_EQ(ab == 1.0, A == B && !A.degenerate());
    const double dx = d(rng), dy = d(rng);
    EXPECT_EQ(iou(translate(A, dx, dy), translate(B, dx, dy)), ab);
  }
}

TEST(Translate, ShiftsAndRoundTrips) {
  EXPECT_EQ(translate({0, 0, 10, 10}, 0, 0), (BBox{0, 0, 10, 10}));
  const BBox moved = translate({10, 20, 60, 80}, 1368, 769);
  EXPECT_EQ(moved, (BBox{1378, 789, 1428, 849}));
  EXPECT_EQ(translate(moved, -1368, -769), (BBox{10, 20, 60, 80}));
  EXPECT_EQ(moved.area(), 50.0 * 60.0);
}

TEST(Clip, InsideDisjointAndPartial) {
  const BBox b{2, 3, 7, 9};
  EXPECT_EQ(clip(b, {0, 0, 100, 100}), b);
  EXPECT_FALSE(clip({0, 0, 10, 10}, {20, 0, 30, 10}).has_value());
  EXPECT_FALSE(clip({0, 0, 10, 10}, {10, 0, 30, 10}).has_value());  // touching edge only

  const auto partial = clip({0, 0, 10, 10}, {5, 5, 20, 20});
  ASSERT_TRUE(partial.has_value());
  EXPECT_EQ(*partial, (BBox{5, 5, 10, 10}));
  EXPECT_EQ(oracle::raster_clip({0, 0, 10, 10}, {5, 5, 20, 20}, 0.5), partial);
}

TEST(Nms, SuppressesLowerScoredOverlap) {
  // IoU of these two is 0.8: 80 / 100 with the second inside the first.
  const std::vector<ScoredBox> in{sb({0, 0, 10, 10}, 0, 0.8), sb({0, 0, 10, 8}, 0, 0.9)};
  ASSERT_DOUBLE_EQ(iou(in[0].box, in[1].box), 0.8);
  const auto out = nms(in, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_EQ(out, oracle::brute_nms(in, 0.5));
}

TEST(Nms, DisjointBoxesAllKeptAtAnyThreshold) {
  const std::vector<ScoredBox> in{sb({0, 0, 5, 5}, 0, 0.3), sb({10, 0, 15, 5}, 0, 0.9),
                                  sb({5, 0, 10, 5}, 0, 0.6)};  // touching, not overlapping
  for (double t : {0.0, 0.25, 0.5, 1.0}) EXPECT_EQ(nms(in, t).size(), 3u) << t;
}

TEST(Nms, SuppressionIsClassWise) {
  const std::vector<ScoredBox> in{sb({0, 0, 10, 10}, 0, 0.9), sb({0, 0, 10, 10}, 1, 0.9)};
  EXPECT_EQ(nms(in, 0.5).size(), 2u);
}

TEST(Nms, DegenerateBoxesNeverKept) {
  const std::vector<ScoredBox> in{sb({5, 5, 5, 9}, 0, 1.0), sb({0, 0, 10, 10}, 0, 0.1)};
  const auto out = nms(in, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].score, 0.1);
}

TEST(Nms, EqualScoresBreakTiesByBoxOrder) {
  const std::vector<ScoredBox> in{sb({1, 0, 11, 10}, 0, 0.5), sb({0, 0, 10, 10}, 0, 0.5)};
  const auto out = nms(in, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].box, (BBox{0, 0, 10, 10}));
}

TEST(Nms, RejectsBadThreshold) {
  EXPECT_THROW(nms({}, 1.5), std::invalid_argument);
  EXPECT_THROW(nms({}, -0.1), std::invalid_argument);
}

TEST(Nms, ParallelSerialAndBruteForceAgree) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n(0, 50);
  std::uniform_real_distribution<double> t(0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const auto boxes = oracle::random_boxes(rng, n(rng), 3);
    const double thr = (i % 3 == 0) ? (i % 9) / 8.0 : t(rng);
    const auto fast = nms(boxes, thr);
    EXPECT_EQ(fast, serial::nms(boxes, thr));
    EXPECT_EQ(fast, oracle::brute_nms(boxes, thr));
    EXPECT_EQ(nms(fast, thr), fast);
    for (std::size_t k = 1; k < fast.size(); ++k) EXPECT_GE(fast[k - 1].score, fast[k].score);
  }
}

TEST(Nms, LargeInputCrossesBitsetWords) {
  std::mt19937_64 rng(5);
  const auto boxes = oracle::random_boxes(rng, 400, 2);
  EXPECT_EQ(nms(boxes, 0.3), oracle::brute_nms(boxes, 0.3));
}
