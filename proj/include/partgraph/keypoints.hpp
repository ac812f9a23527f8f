#pragma once

// Hough-voting keypoint localisation: heatmap mass is displaced by the offset
// field and splatted onto the lattice, peaks are extracted with greedy NMS and
// then confirmed against the DSPF projections.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "partgraph/fields.hpp"

namespace partgraph {

/// Per-category heatmaps M_k in [0,1] and offset fields O_k, plus the disk radius.
struct KeypointMaps {
  std::vector<ScalarField> heatmaps;
  std::vector<VectorField2> offsets;
  double radius = 32.0;

  int categories() const { return static_cast<int>(heatmaps.size()); }
};

struct Keypoint {
  int category = 0;
  GridPoint position;
  double score = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

/// Detected keypoints grouped by category.
struct KeypointSet {
  std::vector<std::vector<Keypoint>> by_category;

  KeypointSet() = default;
  explicit KeypointSet(int categories) : by_category(static_cast<std::size_t>(categories)) {}

  int categories() const { return static_cast<int>(by_category.size()); }
  const std::vector<Keypoint>& of(int k) const { return by_category.at(static_cast<std::size_t>(k)); }
  std::size_t count(int k) const { return of(k).size(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& c : by_category) n += c.size();
    return n;
  }
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

struct Peak {
  GridPoint position;
  double score = 0.0;
};

/// Splats bilinear mass at a real coordinate onto its four neighbours,
/// dropping whatever lands outside the lattice.
inline void splat_bilinear(ScalarField& target, GridPoint at, double mass) {
  const double fu = std::floor(at.u);
  const double fv = std::floor(at.v);
  if (fu < -1.0 || fv < -1.0 || fu > target.width() || fv > target.height()) return;
  const int u0 = static_cast<int>(fu);
  const int v0 = static_cast<int>(fv);
  const double a = at.u - fu;
  const double b = at.v - fv;
  auto add = [&](int u, int v, double w) {
    if (w != 0.0 && target.contains(u, v)) target(u, v) += mass * w;
  };
  add(u0, v0, (1.0 - a) * (1.0 - b));
  add(u0 + 1, v0, a * (1.0 - b));
  add(u0, v0 + 1, (1.0 - a) * b);
  add(u0 + 1, v0 + 1, a * b);
}

/// H(u) = sum over voters u' of M(u') / (pi R^2) splatted at u' + O(u').
inline ScalarField hough_score_map(const ScalarField& heatmap, const VectorField2& offsets, double radius) {
  if (!(radius > 0.0)) throw InvalidInput("hough_score_map: radius must be positive");
  if (!heatmap.same_shape(offsets)) throw InvalidInput("hough_score_map: heatmap/offset lattice mismatch");
  const double norm = 1.0 / (std::numbers::pi * radius * radius);
  ScalarField h(heatmap.width(), heatmap.height());
  for (int v = 0; v < heatmap.height(); ++v)
    for (int u = 0; u < heatmap.width(); ++u) {
      const double m = heatmap(u, v);
      if (m == 0.0) continue;
      const Vec2 o = offsets(u, v);
      splat_bilinear(h, {u + o.du, v + o.dv}, m * norm);
    }
  return h;
}

/// Greedy NMS in descending score order (ties by row, then column). Cells
/// strictly closer than r_nms to an accepted peak are suppressed.
inline std::vector<Peak> extract_peaks(const ScalarField& h, double min_score, double r_nms) {
  struct Cell {
    double score;
    int u, v;
  };
  std::vector<Cell> cells;
  for (int v = 0; v < h.height(); ++v)
    for (int u = 0; u < h.width(); ++u) {
      const double s = h(u, v);
      if (s >= min_score && s > 0.0) cells.push_back({s, u, v});
    }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.v != b.v) return a.v < b.v;
    return a.u < b.u;
  });

  Field<unsigned char> suppressed(h.width(), h.height(), 0);
  const int reach = static_cast<int>(std::ceil(r_nms));
  std::vector<Peak> peaks;
  for (const auto& c : cells) {
    if (suppressed(c.u, c.v)) continue;
    peaks.push_back({{static_cast<double>(c.u), static_cast<double>(c.v)}, c.score});
    for (int dv = -reach; dv <= reach; ++dv)
      for (int du = -reach; du <= reach; ++du) {
        if (!suppressed.contains(c.u + du, c.v + dv)) continue;
        if (std::hypot(du, dv) < r_nms) suppressed(c.u + du, c.v + dv) = 1;
      }
  }
  return peaks;
}

/// Marks the rounded DSPF projection u + D(u) of every foreground pixel.
/// With no mask every pixel projects.
inline Field<unsigned char> projection_support(const VectorField2& dspf, const LabelGrid* foreground) {
  Field<unsigned char> hits(dspf.width(), dspf.height(), 0);
  for (int v = 0; v < dspf.height(); ++v)
    for (int u = 0; u < dspf.width(); ++u) {
      if (foreground && (*foreground)(u, v) <= 0) continue;
      const Vec2 d = dspf(u, v);
      const double pu = std::round(u + d.du);
      const double pv = std::round(v + d.dv);
      if (pu < 0 || pv < 0 || pu >= dspf.width() || pv >= dspf.height()) continue;
      hits(static_cast<int>(pu), static_cast<int>(pv)) = 1;
    }
  return hits;
}

inline bool has_support_near(const Field<unsigned char>& hits, GridPoint p, double radius) {
  const int reach = static_cast<int>(std::ceil(radius));
  const int cu = static_cast<int>(std::lround(p.u));
  const int cv = static_cast<int>(std::lround(p.v));
  for (int dv = -reach; dv <= reach; ++dv)
    for (int du = -reach; du <= reach; ++du) {
      const int u = cu + du;
      const int v = cv + dv;
      if (!hits.contains(u, v) || !hits(u, v)) continue;
      if (std::hypot(u - p.u, v - p.v) <= radius) return true;
    }
  return false;
}

struct CandidateParams {
  double threshold = 0.7;
  double r_nms = 8.0;
};

/// Keeps a peak iff its Hough score exceeds the threshold and at least one
/// DSPF projection from a foreground pixel lands within r_nms of it.
/// `foreground` restricts the projecting pixels (background pixels carry a
/// zero DSPF and would otherwise support every peak trivially).
inline KeypointSet select_candidates(const std::vector<std::vector<Peak>>& peaks_per_category,
                                     const VectorField2& dspf, const LabelGrid* foreground,
                                     const CandidateParams& params = {}) {
  if (foreground && !foreground->same_shape(dspf))
    throw InvalidInput("select_candidates: foreground/DSPF lattice mismatch");
  const auto hits = projection_support(dspf, foreground);
  KeypointSet out(static_cast<int>(peaks_per_category.size()));
  for (std::size_t k = 0; k < peaks_per_category.size(); ++k)
    for (const auto& p : peaks_per_category[k]) {
      if (!(p.score > params.threshold)) continue;
      if (!has_support_near(hits, p.position, params.r_nms)) continue;
      out.by_category[k].push_back({static_cast<int>(k), p.position, std::clamp(p.score, 0.0, 1.0)});
    }
  return out;
}

}  // namespace partgraph
