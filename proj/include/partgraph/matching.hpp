#pragma once

// Per-limb maximum-weight bipartite matching.
//
// Three solvers share one problem: given a score matrix A (rows: parent-joint
// candidates, columns: child-joint candidates) choose pairs so that no two
// pairs share a node, maximising the summed score. Pairs scoring at or below
// the gate are never selected.
//   - hungarian_solve: exact, O(n^3) Kuhn-Munkres on the gated weights
//   - greedy_match: score-sorted or row-sequential heuristics
//   - pgd_solve: LP relaxation solved by projected gradient ascent, where the
//     projection onto {Y1 <= 1, Y^T 1 <= 1, Y >= 0} is computed by Dykstra's
//     cyclic projection. The solver records every elementary projection so
//     matcher_backward can differentiate the unrolled iterations exactly.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "partgraph/fields.hpp"
#include "partgraph/keypoints.hpp"
#include "partgraph/limbs.hpp"

namespace partgraph {

/// Boolean assignment stored as its selected (row, col) pairs, sorted.
struct Matching {
  int rows = 0;
  int cols = 0;
  std::vector<std::pair<int, int>> pairs;

  double weight(const Matrix& a) const {
    double w = 0.0;
    for (auto [n, m] : pairs) w += a(n, m);
    return w;
  }

  Matrix to_matrix() const {
    Matrix y = Matrix::Zero(rows, cols);
    for (auto [n, m] : pairs) y(n, m) = 1.0;
    return y;
  }

  friend bool operator==(const Matching&, const Matching&) = default;
};

struct SolverConfig {
  double alpha = 1.0;
  int pgd_iters = 100;
  int dykstra_iters = 5000;
  double tol = 1e-6;
  double round_threshold = 0.5;
  double score_gate = 0.05;

  void validate() const {
    if (!(alpha > 0.0)) throw InvalidInput("solver: alpha must be positive");
    if (pgd_iters < 1 || dykstra_iters < 1) throw InvalidInput("solver: iteration counts must be >= 1");
    if (!(round_threshold > 0.0 && round_threshold < 1.0))
      throw InvalidInput("solver: round_threshold must lie in (0,1)");
    if (!(tol >= 0.0)) throw InvalidInput("solver: tol must be nonnegative");
  }
};

namespace detail {

inline void check_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) throw InvalidInput(std::string(what) + ": non-finite score");
}

inline Matching sorted_matching(int rows, int cols, std::vector<std::pair<int, int>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  return {rows, cols, std::move(pairs)};
}

// Accepts (value, row, col) candidates in descending value, ties by (row, col),
// skipping any pair whose row or column is already taken.
inline Matching accept_descending(int rows, int cols, std::vector<std::tuple<double, int, int>> cand) {
  std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    return std::make_pair(std::get<1>(x), std::get<2>(x)) < std::make_pair(std::get<1>(y), std::get<2>(y));
  });
  std::vector<char> row_used(static_cast<std::size_t>(rows), 0), col_used(static_cast<std::size_t>(cols), 0);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [val, n, m] : cand) {
    if (row_used[static_cast<std::size_t>(n)] || col_used[static_cast<std::size_t>(m)]) continue;
    row_used[static_cast<std::size_t>(n)] = col_used[static_cast<std::size_t>(m)] = 1;
    pairs.emplace_back(n, m);
  }
  return sorted_matching(rows, cols, std::move(pairs));
}

}  // namespace detail

/// Exact maximum-weight matching; pairs with a <= gate are excluded and nodes
/// may stay unmatched.
inline Matching hungarian_solve(const Matrix& a, double gate = 0.05) {
  detail::check_finite(a, "hungarian_solve");
  const int rows = static_cast<int>(a.rows());
  const int cols = static_cast<int>(a.cols());
  if (rows == 0 || cols == 0) return {rows, cols, {}};

  // Square min-cost assignment on negated gated weights; padding and gated
  // cells cost 0, so any optimal perfect assignment restricted to positive
  // weights is an optimal partial matching.
  const int n = std::max(rows, cols);
  auto cost = [&](int i, int j) -> double {
    if (i >= rows || j >= cols) return 0.0;
    const double w = a(i, j);
    return w > gate ? -w : 0.0;
  };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> pot_row(static_cast<std::size_t>(n + 1), 0.0), pot_col(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> match_col(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int i = 1; i <= n; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match_col[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - pot_row[static_cast<std::size_t>(i0)] - pot_col[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          pot_row[static_cast<std::size_t>(match_col[static_cast<std::size_t>(j)])] += delta;
          pot_col[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match_col[static_cast<std::size_t>(j0)] = match_col[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::pair<int, int>> pairs;
  for (int j = 1; j <= n; ++j) {
    const int i = match_col[static_cast<std::size_t>(j)] - 1;
    const int c = j - 1;
    if (i < rows && c < cols && a(i, c) > gate) pairs.emplace_back(i, c);
  }
  return detail::sorted_matching(rows, cols, std::move(pairs));
}

enum class GreedyVariant { ScoreSorted, RowSequential };

inline Matching greedy_match(const Matrix& a, GreedyVariant variant, double gate = 0.05) {
  detail::check_finite(a, "greedy_match");
  const int rows = static_cast<int>(a.rows());
  const int cols = static_cast<int>(a.cols());
  if (variant == GreedyVariant::ScoreSorted) {
    std::vector<std::tuple<double, int, int>> cand;
    for (int n = 0; n < rows; ++n)
      for (int m = 0; m < cols; ++m)
        if (a(n, m) > gate) cand.emplace_back(a(n, m), n, m);
    return detail::accept_descending(rows, cols, std::move(cand));
  }
  std::vector<char> col_used(static_cast<std::size_t>(cols), 0);
  std::vector<std::pair<int, int>> pairs;
  for (int n = 0; n < rows; ++n) {
    int best = -1;
    for (int m = 0; m < cols; ++m) {
      if (col_used[static_cast<std::size_t>(m)] || !(a(n, m) > gate)) continue;
      if (best < 0 || a(n, m) > a(n, best)) best = m;
    }
    if (best >= 0) {
      col_used[static_cast<std::size_t>(best)] = 1;
      pairs.emplace_back(n, best);
    }
  }
  return detail::sorted_matching(rows, cols, std::move(pairs));
}

/// Largest violation of the matching-polytope constraints.
inline double feasibility_residual(const Matrix& y) {
  if (y.size() == 0) return 0.0;
  double r = std::max(0.0, -y.minCoeff());
  r = std::max(r, y.rowwise().sum().maxCoeff() - 1.0);
  r = std::max(r, y.colwise().sum().maxCoeff() - 1.0);
  return r;
}

/// Activation pattern of one Dykstra cycle: which row / column halfspaces
/// were violated and which entries were clamped to zero.
struct DykstraCycle {
  std::vector<std::uint8_t> row_active;
  std::vector<std::uint8_t> col_active;
  std::vector<std::uint8_t> clamped;  // column-major, same layout as Eigen storage
};

struct DykstraTrace {
  std::vector<DykstraCycle> cycles;
  /// Smallest distance of any elementary-projection input to its switching
  /// boundary (|row sum - 1|, |col sum - 1|, |entry|).
  double min_margin = std::numeric_limits<double>::infinity();
  double final_displacement = 0.0;
};

struct DykstraOptions {
  int max_cycles = 5000;
  double tol = 1e-6;
};

/// Euclidean projection onto {Y1 <= 1, Y^T 1 <= 1, Y >= 0} by Dykstra's
/// cyclic projection over the row halfspaces, column halfspaces and the
/// nonnegative orthant. Stops after max_cycles or when a full cycle moves
/// the iterate and its corrections by less than tol (Frobenius norm).
inline Matrix dykstra_project(const Matrix& y, const DykstraOptions& opt = {}, DykstraTrace* trace = nullptr) {
  detail::check_finite(y, "dykstra_project");
  const Eigen::Index rows = y.rows();
  const Eigen::Index cols = y.cols();
  Matrix x = y;
  if (rows == 0 || cols == 0) return x;
  // The halfspace corrections are constant along their row / column, so they
  // are stored as one scalar per row and per column.
  Eigen::VectorXd p1 = Eigen::VectorXd::Zero(rows), p2 = Eigen::VectorXd::Zero(cols);
  Matrix p3 = Matrix::Zero(rows, cols);
  Matrix prev(rows, cols);
  const double nr = static_cast<double>(rows), nc = static_cast<double>(cols);

  for (int c = 0; c < opt.max_cycles; ++c) {
    prev = x;
    double shifted2 = 0.0;
    DykstraCycle cyc;
    double margin = std::numeric_limits<double>::infinity();

    // Row halfspaces: subtract the excess evenly over the row.
    if (trace) cyc.row_active.assign(static_cast<std::size_t>(rows), 0);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double s = x.row(r).sum() + nc * p1(r);
      margin = std::min(margin, std::abs(s - 1.0));
      const double next = s > 1.0 ? (s - 1.0) / nc : 0.0;
      if (s > 1.0 && trace) cyc.row_active[static_cast<std::size_t>(r)] = 1;
      x.row(r).array() += p1(r) - next;
      shifted2 += nc * (next - p1(r)) * (next - p1(r));
      p1(r) = next;
    }

    // Column halfspaces.
    if (trace) cyc.col_active.assign(static_cast<std::size_t>(cols), 0);
    for (Eigen::Index k = 0; k < cols; ++k) {
      const double s = x.col(k).sum() + nr * p2(k);
      margin = std::min(margin, std::abs(s - 1.0));
      const double next = s > 1.0 ? (s - 1.0) / nr : 0.0;
      if (s > 1.0 && trace) cyc.col_active[static_cast<std::size_t>(k)] = 1;
      x.col(k).array() += p2(k) - next;
      shifted2 += nr * (next - p2(k)) * (next - p2(k));
      p2(k) = next;
    }

    // Nonnegativity.
    if (trace) cyc.clamped.assign(static_cast<std::size_t>(x.size()), 0);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i] + p3.data()[i];
      margin = std::min(margin, std::abs(v));
      const double next = std::min(v, 0.0);
      if (v < 0.0 && trace) cyc.clamped[static_cast<std::size_t>(i)] = 1;
      x.data()[i] = v - next;
      shifted2 += (next - p3.data()[i]) * (next - p3.data()[i]);
      p3.data()[i] = next;
    }

    const double moved = (x - prev).norm();
    if (trace) {
      trace->cycles.push_back(std::move(cyc));
      trace->min_margin = std::min(trace->min_margin, margin);
      trace->final_displacement = moved;
    }
    // x can stall for a cycle while the corrections are still shifting.
    if (moved < opt.tol && std::sqrt(shifted2) < opt.tol && feasibility_residual(x) <= opt.tol) break;
  }
  return x;
}

namespace detail {

// Jacobian of the row-halfspace projection (symmetric): active rows lose their mean.
inline Matrix apply_row_jacobian(const Matrix& g, const std::vector<std::uint8_t>& active) {
  Matrix out = g;
  const double cols = static_cast<double>(g.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    if (active[static_cast<std::size_t>(r)]) out.row(r).array() -= g.row(r).sum() / cols;
  return out;
}

inline Matrix apply_col_jacobian(const Matrix& g, const std::vector<std::uint8_t>& active) {
  Matrix out = g;
  const double rows = static_cast<double>(g.rows());
  for (Eigen::Index k = 0; k < g.cols(); ++k)
    if (active[static_cast<std::size_t>(k)]) out.col(k).array() -= g.col(k).sum() / rows;
  return out;
}

inline Matrix apply_clamp_jacobian(const Matrix& g, const std::vector<std::uint8_t>& clamped) {
  Matrix out = g;
  for (Eigen::Index i = 0; i < g.size(); ++i)
    if (clamped[static_cast<std::size_t>(i)]) out.data()[i] = 0.0;
  return out;
}

}  // namespace detail

/// Vector-Jacobian product of one recorded dykstra_project call: maps a
/// gradient on the projection output to a gradient on its input.
inline Matrix dykstra_backward(const DykstraTrace& trace, const Matrix& upstream) {
  Matrix gx = upstream;
  Matrix gp1 = Matrix::Zero(upstream.rows(), upstream.cols()), gp2 = gp1, gp3 = gp1;
  for (auto it = trace.cycles.rbegin(); it != trace.cycles.rend(); ++it) {
    if (it->row_active.size() != static_cast<std::size_t>(upstream.rows()) ||
        it->col_active.size() != static_cast<std::size_t>(upstream.cols()))
      throw InvalidInput("dykstra_backward: trace/shape mismatch");
    // x3 = P3(z3), p3 = z3 - x3, z3 = x2 + p3_old
    Matrix j = detail::apply_clamp_jacobian(gx, it->clamped);
    Matrix gz = j + gp3 - detail::apply_clamp_jacobian(gp3, it->clamped);
    gx = gz;
    gp3 = gz;
    j = detail::apply_col_jacobian(gx, it->col_active);
    gz = j + gp2 - detail::apply_col_jacobian(gp2, it->col_active);
    gx = gz;
    gp2 = gz;
    j = detail::apply_row_jacobian(gx, it->row_active);
    gz = j + gp1 - detail::apply_row_jacobian(gp1, it->row_active);
    gx = gz;
    gp1 = std::move(gz);
  }
  return gx;
}

struct PgdIterate {
  int iteration = 0;
  double objective = 0.0;  // Tr(A Y^T)
  double feasibility = 0.0;
};

/// Everything matcher_backward needs to replay a pgd_solve run.
struct PgdTrace {
  int rows = 0;
  int cols = 0;
  double alpha = 0.0;
  Matrix gate_mask;  // 1 where the score passed the gate
  std::vector<DykstraTrace> projections;  // warm start first, then one per step
  std::vector<PgdIterate> iterates;
  bool converged = false;

  double min_margin() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& p : projections) m = std::min(m, p.min_margin);
    return m;
  }
};

struct PgdResult {
  Matrix y;
  PgdTrace trace;
};

/// Projected gradient ascent on Tr(A Y^T) over the matching polytope.
/// Scores at or below cfg.score_gate are masked to zero first, so the LP is
/// the relaxation of the same gated problem hungarian_solve solves.
/// Y0 = P(A); Y <- P(Y + alpha A) for up to pgd_iters steps, stopping once a
/// step moves Y by less than cfg.tol (tol = 0 always runs the full unroll).
/// keep_trace = false skips the bookkeeping matcher_backward needs.
inline PgdResult pgd_solve(const Matrix& a, const SolverConfig& cfg = {}, bool keep_trace = true) {
  cfg.validate();
  detail::check_finite(a, "pgd_solve");
  PgdResult res;
  auto& tr = res.trace;
  tr.rows = static_cast<int>(a.rows());
  tr.cols = static_cast<int>(a.cols());
  tr.alpha = cfg.alpha;
  tr.gate_mask = (a.array() > cfg.score_gate).cast<double>().matrix();
  if (a.size() == 0) {
    res.y = Matrix::Zero(a.rows(), a.cols());
    tr.converged = true;
    return res;
  }
  const Matrix gated = a.cwiseProduct(tr.gate_mask);
  const DykstraOptions dopt{cfg.dykstra_iters, cfg.tol};

  auto record = [&](int it, const Matrix& y) {
    if (keep_trace) tr.iterates.push_back({it, a.cwiseProduct(y).sum(), feasibility_residual(y)});
  };
  auto project = [&](const Matrix& z) {
    if (!keep_trace) return dykstra_project(z, dopt);
    tr.projections.emplace_back();
    return dykstra_project(z, dopt, &tr.projections.back());
  };

  Matrix y = project(gated);
  record(0, y);
  for (int t = 1; t <= cfg.pgd_iters && !tr.converged; ++t) {
    Matrix next = project(y + cfg.alpha * gated);
    const double step = (next - y).norm();
    y = std::move(next);
    record(t, y);
    tr.converged = step < cfg.tol;
  }
  res.y = std::move(y);
  return res;
}

/// Reverse-mode gradient of pgd_solve's output with respect to A, replaying
/// the recorded activation patterns of the unrolled iterations.
inline Matrix matcher_backward(const PgdTrace& trace, const Matrix& upstream) {
  if (upstream.rows() != trace.rows || upstream.cols() != trace.cols)
    throw InvalidInput("matcher_backward: upstream gradient shape mismatch");
  if (trace.projections.empty()) {
    if (upstream.size() == 0) return upstream;
    throw InvalidInput("matcher_backward: empty trace");
  }
  Matrix grad_a = Matrix::Zero(trace.rows, trace.cols);
  Matrix gy = upstream;
  for (std::size_t t = trace.projections.size(); t-- > 1;) {
    gy = dykstra_backward(trace.projections[t], gy);
    grad_a += trace.alpha * gy;
  }
  grad_a += dykstra_backward(trace.projections.front(), gy);
  return grad_a.cwiseProduct(trace.gate_mask);
}

/// Binarises a relaxed assignment: descending y, exclusive rows/columns,
/// requiring y >= tau_y and a >= tau_a. Ties by (row, col).
inline Matching round_assignment(const Matrix& y, const Matrix& a, double tau_y = 0.5, double tau_a = 0.05) {
  if (y.rows() != a.rows() || y.cols() != a.cols()) throw InvalidInput("round_assignment: shape mismatch");
  std::vector<std::tuple<double, int, int>> cand;
  for (Eigen::Index n = 0; n < y.rows(); ++n)
    for (Eigen::Index m = 0; m < y.cols(); ++m)
      if (y(n, m) >= tau_y && a(n, m) >= tau_a) cand.emplace_back(y(n, m), static_cast<int>(n), static_cast<int>(m));
  return detail::accept_descending(static_cast<int>(y.rows()), static_cast<int>(y.cols()), std::move(cand));
}

/// Assembled skeleton. joints[k] indexes into the category-k keypoint list.
struct PoseInstance {
  std::vector<std::optional<Keypoint>> joints;
  std::vector<int> keypoint_index;
  double score = 0.0;  // mean Hough score of its joints
  double sigma = 0.0;  // sqrt of the tight joint bounding-box area

  int joint_count() const {
    int n = 0;
    for (const auto& j : joints) n += j.has_value();
    return n;
  }
};

inline void finalize_pose(PoseInstance& pose) {
  double sum = 0.0, umin = 0, umax = 0, vmin = 0, vmax = 0;
  int n = 0;
  for (const auto& j : pose.joints) {
    if (!j) continue;
    const auto p = j->position;
    if (n == 0) {
      umin = umax = p.u;
      vmin = vmax = p.v;
    }
    umin = std::min(umin, p.u);
    umax = std::max(umax, p.u);
    vmin = std::min(vmin, p.v);
    vmax = std::max(vmax, p.v);
    sum += j->score;
    ++n;
  }
  pose.score = n ? sum / n : 0.0;
  pose.sigma = std::sqrt((umax - umin) * (vmax - vmin));
}

/// Groups matched keypoints limb by limb in head-outward order. A match with
/// one claimed endpoint extends that pose, a match with none seeds a new pose,
/// and a match joining two different poses is dropped. Leftover root-category
/// keypoints become single-joint poses; other leftovers are discarded.
inline std::vector<PoseInstance> assemble_poses(const std::vector<Matching>& assignments, const KeypointSet& keypoints,
                                                const SkeletonSpec& skeleton) {
  const auto& limbs = skeleton.limbs();
  if (assignments.size() != limbs.size()) throw InvalidInput("assemble_poses: need one assignment per limb");
  if (keypoints.categories() != skeleton.joints())
    throw InvalidInput("assemble_poses: keypoint categories do not match skeleton");
  const int K = skeleton.joints();

  std::vector<std::vector<int>> owner(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) owner[static_cast<std::size_t>(k)].assign(keypoints.count(k), -1);
  std::vector<PoseInstance> poses;

  auto claim = [&](int pose, int k, int idx) {
    auto& p = poses[static_cast<std::size_t>(pose)];
    p.joints[static_cast<std::size_t>(k)] = keypoints.of(k)[static_cast<std::size_t>(idx)];
    p.keypoint_index[static_cast<std::size_t>(k)] = idx;
    owner[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)] = pose;
  };
  auto new_pose = [&]() {
    PoseInstance p;
    p.joints.resize(static_cast<std::size_t>(K));
    p.keypoint_index.assign(static_cast<std::size_t>(K), -1);
    poses.push_back(std::move(p));
    return static_cast<int>(poses.size()) - 1;
  };
  auto has_category = [&](int pose, int k) {
    return poses[static_cast<std::size_t>(pose)].keypoint_index[static_cast<std::size_t>(k)] >= 0;
  };

  for (std::size_t li = 0; li < limbs.size(); ++li) {
    const Limb limb = limbs[li];
    const auto& m = assignments[li];
    if (m.rows != static_cast<int>(keypoints.count(limb.parent)) ||
        m.cols != static_cast<int>(keypoints.count(limb.child)))
      throw InvalidInput("assemble_poses: assignment shape does not match keypoint counts");
    for (auto [n, c] : m.pairs) {
      const int oa = owner[static_cast<std::size_t>(limb.parent)][static_cast<std::size_t>(n)];
      const int ob = owner[static_cast<std::size_t>(limb.child)][static_cast<std::size_t>(c)];
      if (oa < 0 && ob < 0) {
        const int p = new_pose();
        claim(p, limb.parent, n);
        claim(p, limb.child, c);
      } else if (oa >= 0 && ob < 0) {
        if (!has_category(oa, limb.child)) claim(oa, limb.child, c);
      } else if (oa < 0 && ob >= 0) {
        if (!has_category(ob, limb.parent)) claim(ob, limb.parent, n);
      }
      // Both claimed: same pose needs nothing, different poses conflict and the match is dropped.
    }
  }

  const int root = skeleton.root();
  for (std::size_t i = 0; i < keypoints.count(root); ++i)
    if (owner[static_cast<std::size_t>(root)][i] < 0) claim(new_pose(), root, static_cast<int>(i));

  for (auto& p : poses) finalize_pose(p);
  return poses;
}

}  // namespace partgraph
