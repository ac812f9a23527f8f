#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "partgraph/metrics.hpp"

using namespace partgraph;

namespace {

// Two people side by side on a 20x10 lattice; person 1 has parts 1 and 2,
// person 2 has parts 1 and 3.
InstanceLabeling two_people() {
  InstanceLabeling g{LabelGrid(20, 10), LabelGrid(20, 10), 2, {}};
  for (int v = 0; v < 10; ++v)
    for (int u = 0; u < 20; ++u) {
      if (u < 8) {
        g.instances(u, v) = 1;
        g.parts(u, v) = v < 5 ? 1 : 2;
      } else if (u >= 12) {
        g.instances(u, v) = 2;
        g.parts(u, v) = v < 5 ? 1 : 3;
      }
    }
  return g;
}

InstanceLabeling as_prediction(InstanceLabeling l, std::vector<double> scores) {
  l.scores = std::move(scores);
  return l;
}

PoseInstance pose_from(const std::vector<std::optional<GridPoint>>& j, double score) {
  PoseInstance p;
  p.joints.resize(j.size());
  p.keypoint_index.assign(j.size(), -1);
  for (std::size_t k = 0; k < j.size(); ++k)
    if (j[k]) p.joints[k] = Keypoint{int(k), *j[k], score};
  finalize_pose(p);
  return p;
}

}  // namespace

TEST(Miou, Examples) {
  LabelGrid a(4, 4, std::vector<int>{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 0, 0, 2, 2, 0, 0});
  EXPECT_DOUBLE_EQ(miou(a, a, 3), 1.0);

  // half of a class-1 region predicted, the rest background
  LabelGrid gt(4, 2, std::vector<int>{1, 1, 1, 1, 0, 0, 0, 0});
  LabelGrid pr(4, 2, std::vector<int>{1, 1, 0, 0, 0, 0, 0, 0});
  // class 1: 2/4; class 0: 4/6
  EXPECT_NEAR(miou(pr, gt, 2), (0.5 + 4.0 / 6.0) / 2, 1e-12);

  LabelGrid p2(4, 2, std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1});
  MiouAccumulator acc(2);
  acc.add(p2, gt);
  EXPECT_DOUBLE_EQ(acc.value(), 0.0);  // disjoint

  EXPECT_THROW(miou(LabelGrid(2, 2), LabelGrid(3, 2), 2), InvalidInput);
  EXPECT_THROW(miou(LabelGrid(2, 2, 5), LabelGrid(2, 2), 2), InvalidInput);
}

TEST(Miou, SkipsAbsentClasses) {
  LabelGrid a(2, 2, std::vector<int>{0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(miou(a, a, 6), 1.0);
}

TEST(AveragePrecision, HandCurves) {
  EXPECT_DOUBLE_EQ(average_precision({true, true}, 2), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({}, 2), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({true}, 2), 0.5);
  // TP, FP, TP: precision 1, .5, 2/3 -> interpolated 1 then 2/3
  EXPECT_NEAR(average_precision({true, false, true}, 2), 0.5 * 1.0 + 0.5 * 2.0 / 3.0, 1e-12);
}

TEST(ApPart, PerfectAndEmpty) {
  const auto g = two_people();
  const auto r = ap_part({as_prediction(g, {0.9, 0.8})}, {g}, 4);
  for (auto [t, ap] : r.ap) EXPECT_DOUBLE_EQ(ap, 1.0);
  EXPECT_DOUBLE_EQ(r.ap_vol, 1.0);

  InstanceLabeling none{g.parts, LabelGrid(20, 10), 0, {}};
  EXPECT_DOUBLE_EQ(ap_part({none}, {g}, 4).ap_vol, 0.0);
}

TEST(ApPart, OneOfTwoMatched) {
  const auto g = two_people();
  InstanceLabeling p = g;
  for (auto& x : p.instances.values())
    if (x == 2) x = 0;
  p.count = 1;
  p.scores = {0.9};
  EXPECT_DOUBLE_EQ(ap_part_at({p}, {g}, 4, 0.5), 0.5);
}

TEST(ApPart, InvariantToInstanceRelabelling) {
  const auto g = two_people();
  InstanceLabeling p = as_prediction(g, {0.7, 0.9});
  // shrink person 2 so that similarities differ
  for (int v = 0; v < 10; ++v) p.instances(12, v) = 0;
  InstanceLabeling q = p;
  for (auto& x : q.instances.values())
    if (x) x = 3 - x;
  q.scores = {0.9, 0.7};
  const auto a = ap_part({p}, {g}, 4), b = ap_part({q}, {g}, 4);
  EXPECT_EQ(a.ap, b.ap);
  EXPECT_DOUBLE_EQ(pcp50({p}, {g}, 4), pcp50({q}, {g}, 4));
}

TEST(ApPart, MonotoneInThresholdAndBounded) {
  std::mt19937_64 rng(1);
  const auto g = two_people();
  for (int trial = 0; trial < 20; ++trial) {
    InstanceLabeling p = as_prediction(g, {0.5, 0.6});
    std::uniform_int_distribution<int> cell(0, 199), id(0, 2);
    for (int k = 0; k < 60; ++k) p.instances.values()[cell(rng)] = id(rng);
    const auto r = ap_part({p}, {g}, 4);
    double prev = 1.0;
    for (auto [t, ap] : r.ap) {
      EXPECT_LE(ap, prev + 1e-12);
      EXPECT_GE(ap, 0.0);
      prev = ap;
    }
  }
}

TEST(ApPart, SinglePairIsIndicator) {
  InstanceLabeling g{LabelGrid(10, 1, 1), LabelGrid(10, 1, 1), 1, {}};
  InstanceLabeling p = g;
  for (int u = 0; u < 4; ++u) p.instances(u, 0) = 0;  // IoU 0.6
  p.scores = {1.0};
  EXPECT_DOUBLE_EQ(ap_part_at({p}, {g}, 2, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(ap_part_at({p}, {g}, 2, 0.6), 0.0);  // strictly greater
  EXPECT_DOUBLE_EQ(ap_part_at({p}, {g}, 2, 0.7), 0.0);
}

TEST(Pcp, Examples) {
  const auto g = two_people();
  EXPECT_DOUBLE_EQ(pcp50({as_prediction(g, {1, 1})}, {g}, 4), 1.0);
  InstanceLabeling none{g.parts, LabelGrid(20, 10), 0, {}};
  EXPECT_DOUBLE_EQ(pcp50({none}, {g}, 4), 0.0);

  // one person with 6 parts, three of which are predicted well
  InstanceLabeling one{LabelGrid(12, 2), LabelGrid(12, 2, 1), 1, {}};
  for (int u = 0; u < 12; ++u)
    for (int v = 0; v < 2; ++v) one.parts(u, v) = 1 + u / 2;
  InstanceLabeling pred = one;
  pred.scores = {1.0};
  for (int u = 6; u < 12; ++u) pred.parts(u, 1) = 0;  // parts 4..6 at IoU 0.5 (not > 0.5)
  EXPECT_DOUBLE_EQ(pcp50({pred}, {one}, 7), 0.5);
}

TEST(Oks, Examples) {
  const std::vector<double> kappa(4, 0.1);
  const GtPose gt{{GridPoint{0, 0}, GridPoint{20, 0}, GridPoint{0, 20}, GridPoint{20, 20}}};
  const auto exact = pose_from({GridPoint{0, 0}, GridPoint{20, 0}, GridPoint{0, 20}, GridPoint{20, 20}}, 0.9);
  EXPECT_DOUBLE_EQ(oks(exact, gt, kappa), 1.0);
  EXPECT_DOUBLE_EQ(pose_map_oks({{exact}}, {{gt}}, kappa), 1.0);

  const double shift = 10 * gt.scale() * 0.1;  // 10 sigma kappa
  const auto far = pose_from({GridPoint{shift, 0}, GridPoint{20 + shift, 0}, GridPoint{shift, 20}, GridPoint{20 + shift, 20}}, 0.9);
  EXPECT_LT(oks(far, gt, kappa), 1e-21);
  EXPECT_DOUBLE_EQ(pose_map_oks({{far}}, {{gt}}, kappa), 0.0);

  // invisible ground-truth joints are excluded
  const GtPose half{{GridPoint{0, 0}, GridPoint{20, 0}, std::nullopt, std::nullopt}};
  const auto partial = pose_from({GridPoint{0, 0}, GridPoint{20, 0}, std::nullopt, GridPoint{3, 3}}, 0.9);
  EXPECT_DOUBLE_EQ(oks(partial, half, kappa), 1.0);

  EXPECT_THROW(pose_map_oks({{exact}}, {{gt}}, std::vector<double>(4, 0.0)), InvalidInput);
}

TEST(Oks, AnalyticGaussian) {
  const std::vector<double> kappa(2, 0.1);
  const GtPose gt{{GridPoint{0, 0}, GridPoint{30, 40}}};  // scale sqrt(1200)
  const auto p = pose_from({GridPoint{3, 0}, GridPoint{30, 40}}, 1.0);
  const double s2 = 1200.0;
  EXPECT_NEAR(oks(p, gt, kappa), (std::exp(-9.0 / (2 * s2 * 0.01)) + 1.0) / 2, 1e-12);
}

TEST(PoseMap, RankingByScore) {
  const std::vector<double> kappa(2, 0.1);
  const GtPose gt{{GridPoint{0, 0}, GridPoint{30, 40}}};
  const auto good = pose_from({GridPoint{0, 0}, GridPoint{30, 40}}, 0.5);
  const auto bad = pose_from({GridPoint{90, 90}, GridPoint{60, 60}}, 0.9);
  // false positive ranked first: precision at full recall is 1/2
  EXPECT_DOUBLE_EQ(pose_map_oks({{bad, good}}, {{gt}}, kappa), 0.5);
}
