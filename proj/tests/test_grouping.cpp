#include <gtest/gtest.h>

#include <map>
#include <random>

#include "partgraph/grouping.hpp"
#include "partgraph/synth.hpp"

using namespace partgraph;

namespace {

PoseInstance make_pose(std::vector<std::pair<GridPoint, double>> joints, int K = 16) {
  PoseInstance p;
  p.joints.resize(static_cast<std::size_t>(K));
  p.keypoint_index.assign(static_cast<std::size_t>(K), -1);
  for (std::size_t i = 0; i < joints.size(); ++i) {
    p.joints[i] = Keypoint{static_cast<int>(i), joints[i].first, joints[i].second};
    p.keypoint_index[i] = 0;
  }
  finalize_pose(p);
  return p;
}

// Oracle: direct evaluation of the affinity formula over all poses.
int argmin_pose(GridPoint q, const std::vector<PoseInstance>& poses) {
  int best = -1;
  double best_psi = 0;
  for (std::size_t h = 0; h < poses.size(); ++h) {
    const auto& p = poses[h];
    const double sigma = p.sigma > 0 ? p.sigma : 1.0;
    double psi = 1e300;
    for (const auto& j : p.joints)
      if (j) psi = std::min(psi, distance(q, j->position) / ((j->score + p.score) * sigma));
    if (best < 0 || psi < best_psi) {
      best = static_cast<int>(h);
      best_psi = psi;
    }
  }
  return best;
}

}  // namespace

TEST(InstanceAffinity, Examples) {
  PoseInstance p = make_pose({{{6, 8}, 1.0}});
  p.score = 1.0;
  p.sigma = 10.0;
  EXPECT_NEAR(instance_affinity(GridPoint{3, 4}, p), 0.25, 1e-12);
  VectorField2 d(4, 4);
  d(0, 0) = {3, 4};
  EXPECT_NEAR(instance_affinity(GridPoint{0, 0}, d, p), 0.25, 1e-12);
  EXPECT_EQ(instance_affinity(GridPoint{6, 8}, p), 0.0);
}

TEST(InstanceAffinity, ScaleInvariant) {
  PoseInstance p = make_pose({{{6, 8}, 0.9}, {{14, 20}, 0.8}});
  PoseInstance q = make_pose({{{12, 16}, 0.9}, {{28, 40}, 0.8}});
  EXPECT_NEAR(q.sigma, 2 * p.sigma, 1e-12);
  EXPECT_NEAR(instance_affinity(GridPoint{3, 5}, p), instance_affinity(GridPoint{6, 10}, q), 1e-12);
}

TEST(InstanceAffinity, DegenerateScaleFloor) {
  const PoseInstance p = make_pose({{{5, 5}, 0.5}});
  EXPECT_EQ(p.sigma, 0.0);
  EXPECT_NEAR(instance_affinity(GridPoint{5, 7}, p), 2.0 / (1.0 * kMinInstanceScale), 1e-12);
  EXPECT_THROW(instance_affinity(GridPoint{0, 0}, PoseInstance{}), InvalidInput);
}

TEST(GroupPixels, SinglePose) {
  LabelGrid labels(8, 8);
  labels(2, 3) = 1;
  labels(5, 5) = 4;
  const auto out = group_pixels(labels, VectorField2(8, 8), {make_pose({{{1, 1}, 0.9}})});
  EXPECT_EQ(out.instances(2, 3), 1);
  EXPECT_EQ(out.instances(5, 5), 1);
  EXPECT_EQ(out.instances(0, 0), 0);
  EXPECT_FALSE(out.foreground_without_poses);
}

TEST(GroupPixels, NoPosesOrNoForeground) {
  LabelGrid labels(6, 6);
  labels(1, 1) = 2;
  const auto a = group_pixels(labels, VectorField2(6, 6), {});
  EXPECT_TRUE(a.foreground_without_poses);
  for (int x : a.instances.values()) EXPECT_EQ(x, 0);
  const auto b = group_pixels(LabelGrid(6, 6), VectorField2(6, 6), {});
  EXPECT_FALSE(b.foreground_without_poses);
  EXPECT_THROW(group_pixels(LabelGrid(6, 6), VectorField2(5, 6), {}), InvalidInput);
}

TEST(GroupPixels, TiesGoToLowerPoseIndex) {
  LabelGrid labels(10, 1);
  labels(5, 0) = 1;
  const auto out = group_pixels(labels, VectorField2(10, 1), {make_pose({{{3, 0}, 0.8}}), make_pose({{{7, 0}, 0.8}})});
  EXPECT_EQ(out.instances(5, 0), 1);
}

TEST(GroupPixels, MatchesAffinityOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> pos(0, 40), sc(0.3, 1.0), off(-6, 6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PoseInstance> poses;
    for (int h = 0; h < 3; ++h) {
      std::vector<std::pair<GridPoint, double>> j;
      for (int k = 0; k < 4; ++k) j.push_back({{std::round(pos(rng)), std::round(pos(rng))}, sc(rng)});
      poses.push_back(make_pose(j));
    }
    LabelGrid labels(40, 40, 1);
    VectorField2 d(40, 40);
    for (auto& x : d.values()) x = {off(rng), off(rng)};
    const auto out = group_pixels(labels, d, poses);
    for (int v = 0; v < 40; ++v)
      for (int u = 0; u < 40; ++u) {
        const GridPoint q{u + d(u, v).du, v + d(u, v).dv};
        EXPECT_EQ(out.instances(u, v), argmin_pose(q, poses) + 1);
      }
    // Foreground gets an id exactly where labels are positive
    for (std::size_t i = 0; i < out.instances.size(); ++i) EXPECT_GT(out.instances.values()[i], 0);
  }
}

TEST(GroupPixels, ReorderingPosesOnlyRelabels) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(0, 30), off(-4, 4);
  std::vector<PoseInstance> poses{make_pose({{{5, 5}, 0.9}, {{8, 12}, 0.8}}), make_pose({{{22, 20}, 0.7}, {{25, 28}, 0.9}}),
                                  make_pose({{{10, 25}, 0.8}, {{4, 28}, 0.95}})};
  LabelGrid labels(30, 30, 3);
  VectorField2 d(30, 30);
  for (auto& x : d.values()) x = {off(rng), off(rng)};
  const auto a = group_pixels(labels, d, poses);
  std::vector<PoseInstance> rev(poses.rbegin(), poses.rend());
  const auto b = group_pixels(labels, d, rev);
  for (std::size_t i = 0; i < a.instances.size(); ++i) EXPECT_EQ(b.instances.values()[i], 4 - a.instances.values()[i]);
}

TEST(GroupPixels, GroundTruthPosesRecoverInstances) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = generate_scene(2, 128, 128, seed);
    std::vector<PoseInstance> poses;
    for (const auto& p : s.persons) {
      std::vector<std::pair<GridPoint, double>> j;
      PoseInstance pose;
      pose.joints.resize(16);
      pose.keypoint_index.assign(16, -1);
      for (int k = 0; k < 16; ++k)
        if (p.joints[k].visible) pose.joints[k] = Keypoint{k, p.joints[k].position, 1.0};
      finalize_pose(pose);
      poses.push_back(pose);
    }
    const auto out = group_pixels(s.parts, s.dspf, poses);
    EXPECT_EQ(out.instances, s.instances) << "seed " << seed;
  }
}
