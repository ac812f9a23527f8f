#pragma once

// Skeleton definition, limb heatmaps and limb-hypothesis scoring.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "partgraph/fields.hpp"
#include "partgraph/keypoints.hpp"

namespace partgraph {

using Matrix = Eigen::MatrixXd;

struct Limb {
  int parent = 0;  // endpoint closer to the head
  int child = 0;

  friend bool operator==(const Limb&, const Limb&) = default;
};

/// Joint categories and the kinematic tree over them. Limbs are listed in a
/// head-outward order: every limb's parent category is the root or the child
/// of an earlier limb.
class SkeletonSpec {
 public:
  SkeletonSpec(std::vector<std::string> joint_names, std::vector<Limb> limbs)
      : names_(std::move(joint_names)), limbs_(std::move(limbs)) {
    const int k = joints();
    if (k < 1) throw InvalidInput("skeleton needs at least one joint");
    if (static_cast<int>(limbs_.size()) != k - 1) throw InvalidInput("skeleton limbs must form a tree (K-1 limbs)");
    std::vector<char> reached(static_cast<std::size_t>(k), 0);
    reached[0] = 1;
    for (const auto& l : limbs_) {
      if (l.parent < 0 || l.parent >= k || l.child < 0 || l.child >= k || l.parent == l.child)
        throw InvalidInput("skeleton limb endpoint out of range");
      if (!reached[static_cast<std::size_t>(l.parent)])
        throw InvalidInput("skeleton limbs are not in head-outward order");
      if (reached[static_cast<std::size_t>(l.child)]) throw InvalidInput("skeleton limbs do not form a tree");
      reached[static_cast<std::size_t>(l.child)] = 1;
    }
  }

  /// 16 joints and 15 limbs, head first.
  static SkeletonSpec default_human() {
    return SkeletonSpec(
        {"head_top", "upper_neck", "thorax", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow",
         "l_wrist", "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle"},
        {{0, 1}, {1, 2}, {2, 3}, {2, 6}, {2, 9}, {3, 4}, {6, 7}, {9, 10}, {9, 13}, {4, 5}, {7, 8}, {10, 11},
         {13, 14}, {11, 12}, {14, 15}});
  }

  int joints() const { return static_cast<int>(names_.size()); }
  int root() const { return 0; }
  const std::vector<std::string>& joint_names() const { return names_; }
  const std::vector<Limb>& limbs() const { return limbs_; }

  friend bool operator==(const SkeletonSpec&, const SkeletonSpec&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Limb> limbs_;
};

/// One limb heatmap Q per skeleton limb.
struct LimbMaps {
  std::vector<ScalarField> maps;
  double sigma = 9.0;
};

inline double distance_to_segment(GridPoint p, GridPoint a, GridPoint b) {
  const double du = b.u - a.u;
  const double dv = b.v - a.v;
  const double len2 = du * du + dv * dv;
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(((p.u - a.u) * du + (p.v - a.v) * dv) / len2, 0.0, 1.0);
  return std::hypot(p.u - (a.u + t * du), p.v - (a.v + t * dv));
}

/// Max-combines exp(-d^2 / 2 sigma^2), d = distance to segment [a, b], into `q`.
inline void render_limb_into(ScalarField& q, GridPoint a, GridPoint b, double sigma) {
  if (!(sigma > 0.0)) throw InvalidInput("render_limb_map: sigma must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int v = 0; v < q.height(); ++v)
    for (int u = 0; u < q.width(); ++u) {
      const double d = distance_to_segment({static_cast<double>(u), static_cast<double>(v)}, a, b);
      q(u, v) = std::max(q(u, v), std::exp(-d * d * inv));
    }
}

inline ScalarField render_limb_map(GridPoint a, GridPoint b, double sigma, int width, int height) {
  ScalarField q(width, height);
  render_limb_into(q, a, b, sigma);
  return q;
}

/// Mean of bilinear samples at n equally spaced points on [a, b], endpoints included.
inline double score_limb_pair(const ScalarField& q, GridPoint a, GridPoint b, int n_samples = 10) {
  if (n_samples < 2) throw InvalidInput("score_limb_pair: need at least 2 samples");
  double sum = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    // Evaluate t and 1-t symmetrically so that swapping endpoints gives the same points.
    const double t = static_cast<double>(i) / (n_samples - 1);
    const double s = static_cast<double>(n_samples - 1 - i) / (n_samples - 1);
    sum += bilinear_sample(q, {s * a.u + t * b.u, s * a.v + t * b.v});
  }
  return std::clamp(sum / n_samples, 0.0, 1.0);
}

/// Score matrix of one limb: rows index parent-category keypoints, columns
/// child-category keypoints.
struct ScoreMatrix {
  Limb limb;
  Matrix values;
};

inline std::vector<ScoreMatrix> build_score_matrices(const LimbMaps& limb_maps, const KeypointSet& keypoints,
                                                     const SkeletonSpec& skeleton, int n_samples = 10) {
  if (limb_maps.maps.size() != skeleton.limbs().size())
    throw InvalidInput("build_score_matrices: need one limb map per skeleton limb");
  if (keypoints.categories() != skeleton.joints())
    throw InvalidInput("build_score_matrices: keypoint categories do not match skeleton");
  std::vector<ScoreMatrix> out;
  out.reserve(skeleton.limbs().size());
  for (std::size_t i = 0; i < skeleton.limbs().size(); ++i) {
    const Limb limb = skeleton.limbs()[i];
    const auto& pa = keypoints.of(limb.parent);
    const auto& pb = keypoints.of(limb.child);
    Matrix a(static_cast<Eigen::Index>(pa.size()), static_cast<Eigen::Index>(pb.size()));
    for (std::size_t n = 0; n < pa.size(); ++n)
      for (std::size_t m = 0; m < pb.size(); ++m)
        a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)) =
            score_limb_pair(limb_maps.maps[i], pa[n].position, pb[m].position, n_samples);
    out.push_back({limb, std::move(a)});
  }
  return out;
}

}  // namespace partgraph
