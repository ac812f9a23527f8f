#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

#include "partgraph/gradcheck.hpp"
#include "partgraph/matching.hpp"

using namespace partgraph;

namespace {

// Brute force over all partial matchings restricted to entries above the gate.
double best_weight_exhaustive(const Matrix& a, double gate = 0.05) {
  std::vector<char> used(static_cast<std::size_t>(a.cols()), 0);
  std::function<double(Eigen::Index)> go = [&](Eigen::Index r) -> double {
    if (r == a.rows()) return 0.0;
    double best = go(r + 1);
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (used[c] || !(a(r, c) > gate)) continue;
      used[c] = 1;
      best = std::max(best, a(r, c) + go(r + 1));
      used[c] = 0;
    }
    return best;
  };
  return go(0);
}

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Matrix a(r, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
  return a;
}

bool is_valid_matching(const Matching& m) {
  std::set<int> rows, cols;
  for (auto [r, c] : m.pairs) {
    if (!rows.insert(r).second || !cols.insert(c).second) return false;
    if (r < 0 || c < 0 || r >= m.rows || c >= m.cols) return false;
  }
  return true;
}

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double x : r) a(i, j++) = x;
    ++i;
  }
  return a;
}

using Pairs = std::vector<std::pair<int, int>>;

}  // namespace

TEST(Hungarian, Examples) {
  const auto a = mat({{0.9, 0.1}, {0.2, 0.8}});
  const auto m = hungarian_solve(a);
  EXPECT_EQ(m.pairs, (Pairs{{0, 0}, {1, 1}}));
  EXPECT_NEAR(m.weight(a), 1.7, 1e-12);
  EXPECT_NEAR(best_weight_exhaustive(a), 1.7, 1e-12);
  EXPECT_EQ(hungarian_solve(mat({{0.5}})).pairs, (Pairs{{0, 0}}));
  EXPECT_TRUE(hungarian_solve(Matrix::Zero(3, 4)).pairs.empty());
  EXPECT_TRUE(hungarian_solve(Matrix(0, 3)).pairs.empty());
}

TEST(Hungarian, LexicographicTieBreak) {
  const auto m = hungarian_solve(mat({{0.5, 0.5}, {0.5, 0.5}}));
  EXPECT_EQ(m.pairs, (Pairs{{0, 0}, {1, 1}}));
}

TEST(Hungarian, RejectsNonFinite) {
  EXPECT_THROW(hungarian_solve(mat({{NAN}})), InvalidInput);
}

TEST(Hungarian, OptimalAgainstExhaustiveOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int r = 1 + trial % 5, c = 1 + (trial / 5) % 5;
    const auto a = random_matrix(r, c, rng);
    const auto m = hungarian_solve(a);
    EXPECT_TRUE(is_valid_matching(m));
    EXPECT_NEAR(m.weight(a), best_weight_exhaustive(a), 1e-12);
    for (auto [i, j] : m.pairs) EXPECT_GT(a(i, j), 0.05);
  }
}

TEST(Greedy, Examples) {
  const auto a = mat({{0.9, 0.1}, {0.2, 0.8}});
  EXPECT_EQ(greedy_match(a, GreedyVariant::ScoreSorted).pairs, (Pairs{{0, 0}, {1, 1}}));
  EXPECT_EQ(greedy_match(a, GreedyVariant::RowSequential).pairs, (Pairs{{0, 0}, {1, 1}}));

  const auto b = mat({{0.9, 0.8}, {0.85, 0.1}});
  const auto g = greedy_match(b, GreedyVariant::ScoreSorted);
  EXPECT_EQ(g.pairs, (Pairs{{0, 0}, {1, 1}}));
  EXPECT_NEAR(g.weight(b), 1.0, 1e-12);
  EXPECT_NEAR(best_weight_exhaustive(b), 1.65, 1e-12);
  EXPECT_NEAR(hungarian_solve(b).weight(b), 1.65, 1e-12);

  EXPECT_TRUE(greedy_match(Matrix(0, 0), GreedyVariant::ScoreSorted).pairs.empty());
  EXPECT_TRUE(greedy_match(Matrix(2, 0), GreedyVariant::RowSequential).pairs.empty());
}

TEST(Greedy, RowSequentialTakesBestFreeColumn) {
  const auto a = mat({{0.3, 0.6}, {0.2, 0.9}});
  EXPECT_EQ(greedy_match(a, GreedyVariant::RowSequential).pairs, (Pairs{{0, 1}, {1, 0}}));
  EXPECT_EQ(greedy_match(a, GreedyVariant::ScoreSorted).pairs, (Pairs{{0, 0}, {1, 1}}));
}

TEST(MatchingProperties, WeightOrderingAndScaleInvariance) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_matrix(1 + trial % 7, 1 + (trial / 7) % 7, rng);
    const auto h = hungarian_solve(a);
    for (auto v : {GreedyVariant::ScoreSorted, GreedyVariant::RowSequential}) {
      const auto g = greedy_match(a, v);
      EXPECT_TRUE(is_valid_matching(g));
      EXPECT_GE(h.weight(a) + 1e-12, g.weight(a));
      EXPECT_GE(g.weight(a), 0.0);
    }
    const double c = 3.7;
    EXPECT_EQ(hungarian_solve(c * a, c * 0.05).pairs, h.pairs);
    EXPECT_EQ(greedy_match(c * a, GreedyVariant::ScoreSorted, c * 0.05).pairs,
              greedy_match(a, GreedyVariant::ScoreSorted).pairs);
    EXPECT_EQ(greedy_match(c * a, GreedyVariant::RowSequential, c * 0.05).pairs,
              greedy_match(a, GreedyVariant::RowSequential).pairs);
  }
}

TEST(Dykstra, Examples) {
  EXPECT_NEAR(dykstra_project(mat({{2.0}}))(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(dykstra_project(mat({{-0.5}}))(0, 0), 0.0, 1e-12);
  const auto y = dykstra_project(mat({{1.0, 1.0}}));
  EXPECT_NEAR(y(0, 0), 0.5, 1e-9);
  EXPECT_NEAR(y(0, 1), 0.5, 1e-9);
}

TEST(Dykstra, FeasibleInputPassesThrough) {
  const auto y = mat({{0.2, 0.3}, {0.5, 0.1}});
  EXPECT_EQ(dykstra_project(y), y);
}

TEST(Dykstra, FeasibleAndIdempotent) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 2);
  const DykstraOptions opt{2000, 1e-12};
  for (int trial = 0; trial < 200; ++trial) {
    Matrix y(1 + trial % 6, 1 + (trial / 6) % 6);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = u(rng);
    const auto p = dykstra_project(y, opt);
    EXPECT_LE(feasibility_residual(p), 1e-6);
    EXPECT_LE((dykstra_project(p, opt) - p).norm(), 1e-6);
  }
}

TEST(Dykstra, NearestFeasiblePoint) {
  // Variational check: for the Euclidean projection p of y, <y - p, z - p> <= 0
  // for every feasible z. Probe with random feasible points.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 2), unit(0, 1);
  const DykstraOptions opt{5000, 1e-14};
  for (int trial = 0; trial < 50; ++trial) {
    const int r = 2 + trial % 3, c = 2 + (trial / 3) % 3;
    Matrix y(r, c);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = u(rng);
    const auto p = dykstra_project(y, opt);
    for (int k = 0; k < 100; ++k) {
      Matrix z(r, c);
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = unit(rng);
      z /= std::max({1.0, z.rowwise().sum().maxCoeff(), z.colwise().sum().maxCoeff()});
      EXPECT_LE((y - p).cwiseProduct(z - p).sum(), 1e-6);
    }
  }
}

TEST(Pgd, Examples) {
  EXPECT_NEAR(pgd_solve(mat({{1.0}})).y(0, 0), 1.0, 1e-6);
  const auto y = pgd_solve(mat({{0.9, 0.1}, {0.2, 0.8}})).y;
  EXPECT_LE((y - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-3);
  const auto z = pgd_solve(mat({{0.1, 0.9, 0.3}})).y;
  EXPECT_LE((z - mat({{0, 1, 0}})).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Pgd, IteratesStayFeasible) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_matrix(1 + trial % 6, 1 + (trial / 6) % 6, rng);
    const auto r = pgd_solve(a);
    ASSERT_FALSE(r.trace.iterates.empty());
    for (const auto& it : r.trace.iterates) EXPECT_LE(it.feasibility, 1e-6);
    EXPECT_EQ(r.trace.projections.size(), r.trace.iterates.size());
  }
}

TEST(Pgd, TraceToggleDoesNotChangeResult) {
  std::mt19937_64 rng(6);
  const auto a = random_matrix(5, 4, rng);
  const auto full = pgd_solve(a);
  const auto lean = pgd_solve(a, {}, false);
  EXPECT_EQ(full.y, lean.y);
  EXPECT_TRUE(lean.trace.projections.empty());
}

TEST(Pgd, ConfigValidation) {
  SolverConfig c;
  c.alpha = 0;
  EXPECT_THROW(pgd_solve(mat({{1}}), c), InvalidInput);
  c = {};
  c.round_threshold = 1.0;
  EXPECT_THROW(pgd_solve(mat({{1}}), c), InvalidInput);
  c = {};
  c.pgd_iters = 0;
  EXPECT_THROW(pgd_solve(mat({{1}}), c), InvalidInput);
}

TEST(Pgd, AgreesWithHungarianOnRandomSuite) {
  std::mt19937_64 rng(7);
  int agree = 0;
  const int n = 200;
  for (int trial = 0; trial < n; ++trial) {
    std::uniform_int_distribution<int> sz(1, 8);
    const auto a = random_matrix(sz(rng), sz(rng), rng);
    const auto m = round_assignment(pgd_solve(a, {}, false).y, a);
    EXPECT_TRUE(is_valid_matching(m));
    agree += std::abs(m.weight(a) - hungarian_solve(a).weight(a)) <= 1e-6;
  }
  EXPECT_GE(agree, n * 97 / 100);
}

TEST(MatcherBackward, ZeroUpstream) {
  std::mt19937_64 rng(8);
  const auto a = random_matrix(3, 3, rng);
  const auto r = pgd_solve(a);
  EXPECT_EQ(matcher_backward(r.trace, Matrix::Zero(3, 3)), Matrix::Zero(3, 3));
}

TEST(MatcherBackward, InteriorOneByOne) {
  // Y0 = a, Y_t = Y_{t-1} + alpha a while Y stays inside (0, 1):
  // Y_T = (1 + alpha T) a, so dY/dA = 1 + alpha T.
  SolverConfig cfg;
  cfg.alpha = 0.1;
  cfg.pgd_iters = 5;
  cfg.tol = 0.0;
  const auto r = pgd_solve(mat({{0.1}}), cfg);
  EXPECT_NEAR(r.y(0, 0), 0.1 * 1.5, 1e-15);
  EXPECT_NEAR(matcher_backward(r.trace, mat({{1.0}}))(0, 0), 1.0 + 0.1 * 5, 1e-12);
}

TEST(MatcherBackward, GatedEntriesHaveZeroGradient) {
  const auto a = mat({{0.01, 0.6}, {0.7, 0.02}});
  const auto r = pgd_solve(a);
  const auto g = matcher_backward(r.trace, Matrix::Ones(2, 2));
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(1, 1), 0.0);
}

TEST(MatcherBackward, ShapeMismatch) {
  const auto r = pgd_solve(mat({{0.5, 0.2}}));
  EXPECT_THROW(matcher_backward(r.trace, Matrix::Zero(2, 1)), InvalidInput);
}

TEST(MatcherBackward, FiniteDifferences3x3) {
  // Independent central differences on 3x3 problems away from any switching boundary.
  std::mt19937_64 rng(9);
  SolverConfig cfg{0.1, 20, 20, 0.0, 0.5, 0.05};
  int tested = 0;
  while (tested < 20) {
    const auto a = random_matrix(3, 3, rng);
    if ((a.array() - cfg.score_gate).abs().minCoeff() < 1e-3) continue;
    const auto r = pgd_solve(a, cfg);
    if (r.trace.min_margin() <= 1e-3) continue;
    const auto w = random_matrix(3, 3, rng);
    const auto g = matcher_backward(r.trace, w);
    const double eps = 1e-5;
    Matrix fd(3, 3);
    for (Eigen::Index i = 0; i < 9; ++i) {
      Matrix ap = a, am = a;
      ap.data()[i] += eps;
      am.data()[i] -= eps;
      fd.data()[i] = (pgd_solve(ap, cfg, false).y - pgd_solve(am, cfg, false).y).cwiseProduct(w).sum() / (2 * eps);
    }
    EXPECT_LE((fd - g).norm() / std::max(fd.norm(), 1e-8), 1e-3);
    ++tested;
  }
}

TEST(MatcherBackward, GradcheckSuite) {
  GradcheckOptions opt;
  opt.probes = 100;
  const auto r = gradcheck_matcher(opt);
  EXPECT_EQ(r.probes, 100);
  EXPECT_LE(r.max_rel_error, 1e-3);
}

TEST(RoundAssignment, Examples) {
  const auto ones = Matrix::Ones(2, 2).eval();
  EXPECT_EQ(round_assignment(mat({{0.98, 0.01}, {0.02, 0.90}}), ones).pairs, (Pairs{{0, 0}, {1, 1}}));
  EXPECT_EQ(round_assignment(mat({{0.5, 0.5}}), Matrix::Ones(1, 2)).pairs, (Pairs{{0, 0}}));
  EXPECT_TRUE(round_assignment(Matrix::Constant(2, 2, 0.1), ones).pairs.empty());
  EXPECT_THROW(round_assignment(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), InvalidInput);
}

namespace {

KeypointSet chain_keypoints(int persons, const SkeletonSpec& s) {
  KeypointSet ks(s.joints());
  for (int p = 0; p < persons; ++p)
    for (int k = 0; k < s.joints(); ++k) ks.by_category[k].push_back({k, {10.0 * k, 50.0 * p}, 0.9});
  return ks;
}

}  // namespace

TEST(AssemblePoses, OnePersonFullyMatched) {
  const auto s = SkeletonSpec::default_human();
  std::vector<Matching> m(15, Matching{1, 1, {{0, 0}}});
  const auto poses = assemble_poses(m, chain_keypoints(1, s), s);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].joint_count(), 16);
  EXPECT_NEAR(poses[0].score, 0.9, 1e-12);
  // bounding box 150 x 0 is degenerate
  EXPECT_EQ(poses[0].sigma, 0.0);
}

TEST(AssemblePoses, TwoPersonsTruthAssignments) {
  const auto s = SkeletonSpec::default_human();
  std::vector<Matching> m(15, Matching{2, 2, {{0, 1}, {1, 0}}});
  // keypoint index i of every category belongs to person i, except that
  // category lists are reversed for odd categories
  auto ks = chain_keypoints(2, s);
  for (int k = 1; k < 16; k += 2) std::swap(ks.by_category[k][0], ks.by_category[k][1]);
  for (std::size_t li = 0; li < 15; ++li) {
    const auto l = s.limbs()[li];
    const bool swap = (l.parent % 2) != (l.child % 2);
    m[li].pairs = swap ? Pairs{{0, 1}, {1, 0}} : Pairs{{0, 0}, {1, 1}};
  }
  const auto poses = assemble_poses(m, ks, s);
  ASSERT_EQ(poses.size(), 2u);
  for (const auto& p : poses) {
    EXPECT_EQ(p.joint_count(), 16);
    const double row = p.joints[0]->position.v;
    for (const auto& j : p.joints) EXPECT_EQ(j->position.v, row);
  }
}

TEST(AssemblePoses, EmptyAssignments) {
  const auto s = SkeletonSpec::default_human();
  KeypointSet ks(16);
  std::vector<Matching> m(15);
  EXPECT_TRUE(assemble_poses(m, ks, s).empty());
}

TEST(AssemblePoses, LeftoverHeadsBecomeSinglePoses) {
  const auto s = SkeletonSpec::default_human();
  auto ks = chain_keypoints(1, s);
  const std::vector<Matching> m(15, Matching{1, 1, {}});
  const auto poses = assemble_poses(m, ks, s);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].joint_count(), 1);
  EXPECT_TRUE(poses[0].joints[0].has_value());
}

TEST(AssemblePoses, MatchesExtendClaimedEndpoints) {
  // three joints a - b - c; b-c matches extend the poses seeded by a-b
  const SkeletonSpec s({"a", "b", "c"}, {{0, 1}, {1, 2}});
  KeypointSet ks(3);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 2; ++i) ks.by_category[k].push_back({k, {double(k), double(10 * i)}, 0.8});
  std::vector<Matching> m{{2, 2, {{0, 0}, {1, 1}}}, {2, 2, {{0, 0}, {1, 1}}}};
  auto poses = assemble_poses(m, ks, s);
  EXPECT_EQ(poses.size(), 2u);
  EXPECT_EQ(poses[0].joint_count(), 3);
  m[1].pairs = {{0, 1}};
  poses = assemble_poses(m, ks, s);
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_EQ(poses[0].joint_count(), 3);  // pose 0 takes c[1]
  EXPECT_EQ(poses[1].joint_count(), 2);
}

TEST(AssemblePoses, DisjointKeypointsOnRandomAssignments) {
  std::mt19937_64 rng(10);
  const auto s = SkeletonSpec::default_human();
  for (int trial = 0; trial < 50; ++trial) {
    KeypointSet ks(16);
    std::uniform_int_distribution<int> cnt(0, 4);
    for (int k = 0; k < 16; ++k) {
      const int n = cnt(rng);
      for (int i = 0; i < n; ++i) ks.by_category[k].push_back({k, {double(i), double(k)}, 0.8});
    }
    std::vector<Matching> m;
    for (const auto& l : s.limbs()) {
      const auto a = random_matrix(int(ks.count(l.parent)), int(ks.count(l.child)), rng);
      m.push_back(greedy_match(a, GreedyVariant::ScoreSorted));
    }
    const auto poses = assemble_poses(m, ks, s);
    std::set<std::pair<int, int>> seen;
    for (const auto& p : poses) {
      EXPECT_GE(p.joint_count(), 1);
      for (int k = 0; k < 16; ++k)
        if (p.keypoint_index[k] >= 0) {
          EXPECT_TRUE(seen.insert({k, p.keypoint_index[k]}).second);
        }
    }
  }
}
