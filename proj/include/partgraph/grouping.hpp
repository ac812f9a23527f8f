#pragma once

// Pixel-to-instance grouping: every person pixel follows its DSPF vector to a
// joint location and joins the pose whose nearest joint is closest in a
// score- and scale-normalised distance.

#include <cmath>
#include <limits>
#include <vector>

#include "partgraph/fields.hpp"
#include "partgraph/matching.hpp"

namespace partgraph {

/// Scale floor for poses whose joints have a degenerate bounding box.
inline constexpr double kMinInstanceScale = 1.0;

struct InstanceParsing {
  LabelGrid parts;      // 0 background, 1..P-1 part classes
  LabelGrid instances;  // 0 none, 1..poses.size()
  std::vector<PoseInstance> poses;
  bool foreground_without_poses = false;
};

inline double effective_scale(const PoseInstance& pose) {
  return pose.sigma > 0.0 ? pose.sigma : kMinInstanceScale;
}

/// psi_h = min over joints of |q - p_n| / ((s_n + s_h) * sigma_h), where q is
/// the projected point u + D(u).
inline double instance_affinity(GridPoint projected, const PoseInstance& pose) {
  if (pose.joint_count() == 0) throw InvalidInput("instance_affinity: pose has no joints");
  const double sigma = effective_scale(pose);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& j : pose.joints) {
    if (!j) continue;
    const double dist = distance(projected, j->position);
    const double denom = (j->score + pose.score) * sigma;
    const double psi = dist == 0.0 ? 0.0 : (denom > 0.0 ? dist / denom : std::numeric_limits<double>::infinity());
    best = std::min(best, psi);
  }
  return best;
}

inline double instance_affinity(GridPoint u, const VectorField2& dspf, const PoseInstance& pose) {
  const int iu = static_cast<int>(u.u);
  const int iv = static_cast<int>(u.v);
  if (!dspf.contains(iu, iv)) throw InvalidInput("instance_affinity: pixel outside DSPF lattice");
  return instance_affinity(u + dspf(iu, iv), pose);
}

/// Assigns each foreground pixel to argmin_h psi_h (ties to the lowest pose
/// index); ids are pose index + 1. With no poses the foreground keeps id 0
/// and the diagnostic flag is raised.
inline InstanceParsing group_pixels(const LabelGrid& labels, const VectorField2& dspf, std::vector<PoseInstance> poses) {
  if (!labels.same_shape(dspf)) throw InvalidInput("group_pixels: label/DSPF lattice mismatch");
  InstanceParsing out{labels, LabelGrid(labels.width(), labels.height()), std::move(poses), false};

  struct Site {
    GridPoint p;
    double inv_scale;
    int pose;
  };
  std::vector<Site> sites;
  for (std::size_t h = 0; h < out.poses.size(); ++h) {
    const auto& pose = out.poses[h];
    const double sigma = effective_scale(pose);
    for (const auto& j : pose.joints) {
      if (!j) continue;
      const double denom = (j->score + pose.score) * sigma;
      sites.push_back({j->position, denom > 0.0 ? 1.0 / denom : std::numeric_limits<double>::infinity(),
                       static_cast<int>(h)});
    }
  }

  for (int v = 0; v < labels.height(); ++v)
    for (int u = 0; u < labels.width(); ++u) {
      if (labels(u, v) <= 0) continue;
      if (sites.empty()) {
        out.foreground_without_poses = true;
        continue;
      }
      const Vec2 d = dspf(u, v);
      const GridPoint q{u + d.du, v + d.dv};
      // Compare squared affinities; the ordering is the same.
      double best = std::numeric_limits<double>::infinity();
      int best_pose = 0;
      for (const auto& s : sites) {
        const double du = q.u - s.p.u;
        const double dv = q.v - s.p.v;
        const double d2 = du * du + dv * dv;
        const double psi = d2 == 0.0 ? 0.0 : d2 * s.inv_scale * s.inv_scale;
        if (psi < best || (psi == best && s.pose < best_pose)) {
          best = psi;
          best_pose = s.pose;
        }
      }
      out.instances(u, v) = best_pose + 1;
    }
  return out;
}

}  // namespace partgraph
