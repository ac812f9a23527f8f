#pragma once

// Deterministic stick-figure scenes with full ground truth, target rendering
// and seeded corruption models. These stand in for trained network heads.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "partgraph/dspf.hpp"
#include "partgraph/fields.hpp"
#include "partgraph/keypoints.hpp"
#include "partgraph/limbs.hpp"

namespace partgraph {

struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Six-part labelling used by the synthetic scenes (0 is background).
enum PartLabel : int { kBackground = 0, kHead = 1, kTorso = 2, kUpperArm = 3, kLowerArm = 4, kUpperLeg = 5, kLowerLeg = 6 };
inline constexpr int kPartClasses = 7;

struct SceneJoint {
  GridPoint position;
  bool visible = true;

  friend bool operator==(const SceneJoint&, const SceneJoint&) = default;
};

struct ScenePerson {
  std::vector<SceneJoint> joints;
  double scale = 1.0;

  friend bool operator==(const ScenePerson&, const ScenePerson&) = default;
};

struct Scene {
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;
  SkeletonSpec skeleton = SkeletonSpec::default_human();
  std::vector<ScenePerson> persons;
  LabelGrid parts;
  LabelGrid instances;  // person index + 1, 0 background
  VectorField2 dspf;    // ground truth, zero on background
};

enum class Overlap { Allowed, Forbidden };

namespace synth_detail {

// Child-minus-parent vectors of the default skeleton at scale 1, in limb order.
inline const std::array<Vec2, 15>& template_limbs() {
  static const std::array<Vec2, 15> t{{
      {0, 8},    // head_top -> upper_neck
      {0, 4},    // upper_neck -> thorax
      {-8, 1},   // thorax -> r_shoulder
      {8, 1},    // thorax -> l_shoulder
      {0, 18},   // thorax -> pelvis
      {-2, 10},  // r_shoulder -> r_elbow
      {2, 10},   // l_shoulder -> l_elbow
      {-5, 1},   // pelvis -> r_hip
      {5, 1},    // pelvis -> l_hip
      {-1, 9},   // r_elbow -> r_wrist
      {1, 9},    // l_elbow -> l_wrist
      {-1, 12},  // r_hip -> r_knee
      {1, 12},   // l_hip -> l_knee
      {0, 12},   // r_knee -> r_ankle
      {0, 12},   // l_knee -> l_ankle
  }};
  return t;
}

struct Capsule {
  int a, b;       // joint categories
  double radius;  // at scale 1
  int part;
};

// Painted in order; later capsules overwrite earlier ones within a person.
inline const std::vector<Capsule>& capsules() {
  static const std::vector<Capsule> c{
      {1, 2, 3.0, kTorso},     {2, 9, 6.0, kTorso},     {2, 3, 3.0, kTorso},     {2, 6, 3.0, kTorso},
      {9, 10, 3.0, kTorso},    {9, 13, 3.0, kTorso},    {10, 11, 3.0, kUpperLeg}, {13, 14, 3.0, kUpperLeg},
      {11, 12, 2.5, kLowerLeg}, {14, 15, 2.5, kLowerLeg}, {3, 4, 2.5, kUpperArm},  {6, 7, 2.5, kUpperArm},
      {4, 5, 2.0, kLowerArm},  {7, 8, 2.0, kLowerArm},  {0, 1, 4.0, kHead},
  };
  return c;
}

inline Vec2 rotate(Vec2 v, double radians) {
  const double c = std::cos(radians), s = std::sin(radians);
  return {c * v.du - s * v.dv, s * v.du + c * v.dv};
}

// Fraction of a unit disk cut off by a chord at distance x (in radii) from the centre.
inline double cap_fraction(double x) {
  if (x >= 1.0) return 0.0;
  x = std::max(x, 0.0);
  return (std::acos(x) - x * std::sqrt(1.0 - x * x)) / std::numbers::pi;
}

template <typename Fn>
void for_each_capsule_pixel(GridPoint a, GridPoint b, double radius, int width, int height, Fn&& fn) {
  const int u0 = std::max(0, static_cast<int>(std::floor(std::min(a.u, b.u) - radius)));
  const int u1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.u, b.u) + radius)));
  const int v0 = std::max(0, static_cast<int>(std::floor(std::min(a.v, b.v) - radius)));
  const int v1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.v, b.v) + radius)));
  for (int v = v0; v <= v1; ++v)
    for (int u = u0; u <= u1; ++u)
      if (distance_to_segment({static_cast<double>(u), static_cast<double>(v)}, a, b) <= radius) fn(u, v);
}

}  // namespace synth_detail

/// Default Hough disk radius for a lattice: an eighth of the shorter side.
inline double default_radius(int width, int height) { return std::min(width, height) / 8.0; }

/// Lower bound on the share of a joint's R-disk that lies inside the lattice
/// and is closer to it than to any other joint of the same category.
inline double hough_support(const std::vector<ScenePerson>& persons, std::size_t person, int category, int width,
                            int height, double radius) {
  const GridPoint p = persons[person].joints[static_cast<std::size_t>(category)].position;
  double lost = synth_detail::cap_fraction((p.u + 0.5) / radius) +
                synth_detail::cap_fraction((width - 0.5 - p.u) / radius) +
                synth_detail::cap_fraction((p.v + 0.5) / radius) +
                synth_detail::cap_fraction((height - 0.5 - p.v) / radius);
  for (std::size_t o = 0; o < persons.size(); ++o) {
    if (o == person) continue;
    const GridPoint q = persons[o].joints[static_cast<std::size_t>(category)].position;
    lost += synth_detail::cap_fraction(distance(p, q) / (2.0 * radius));
  }
  return 1.0 - lost;
}

struct SceneOptions {
  Overlap overlap = Overlap::Forbidden;
  int max_attempts = 1000;
  double min_support = 0.8;  // forbidden mode: hough_support floor per joint
  int gap = 2;               // forbidden mode: min pixel gap between person masks
};

/// Paints one person's capsules into the grids with the given id.
inline void paint_person(const ScenePerson& person, int id, LabelGrid& parts, LabelGrid& instances) {
  for (const auto& c : synth_detail::capsules()) {
    const double r = std::max(1.5, c.radius * person.scale);
    synth_detail::for_each_capsule_pixel(person.joints[static_cast<std::size_t>(c.a)].position,
                                         person.joints[static_cast<std::size_t>(c.b)].position, r, parts.width(),
                                         parts.height(), [&](int u, int v) {
                                           parts(u, v) = c.part;
                                           instances(u, v) = id;
                                         });
  }
}

/// Ground-truth DSPF: each person pixel points at the nearest visible joint of
/// its own instance (all joints of the instance if none is visible).
inline VectorField2 ground_truth_dspf(const std::vector<ScenePerson>& persons, const LabelGrid& instances) {
  VectorField2 d(instances.width(), instances.height());
  for (int v = 0; v < instances.height(); ++v)
    for (int u = 0; u < instances.width(); ++u) {
      const int id = instances(u, v);
      if (id <= 0) continue;
      const auto& joints = persons[static_cast<std::size_t>(id - 1)].joints;
      const bool any_visible = std::any_of(joints.begin(), joints.end(), [](const auto& j) { return j.visible; });
      double best = std::numeric_limits<double>::infinity();
      GridPoint target{static_cast<double>(u), static_cast<double>(v)};
      for (const auto& j : joints) {
        if (any_visible && !j.visible) continue;
        const double dist = distance({static_cast<double>(u), static_cast<double>(v)}, j.position);
        if (dist < best) {
          best = dist;
          target = j.position;
        }
      }
      d(u, v) = {target.u - u, target.v - v};
    }
  return d;
}

/// Places n_persons jittered, scaled stick figures. In forbidden mode masks
/// keep a gap and every joint keeps enough undisturbed Hough support; a
/// person that cannot be placed within max_attempts raises PlacementError.
inline Scene generate_scene(int n_persons, int width, int height, std::uint64_t seed, const SceneOptions& opt = {}) {
  if (n_persons < 0) throw InvalidInput("generate_scene: person count must be >= 0");
  if (width < 64 || height < 64) throw InvalidInput("generate_scene: lattice must be at least 64x64");

  Scene scene;
  scene.width = width;
  scene.height = height;
  scene.seed = seed;
  scene.parts = LabelGrid(width, height);
  scene.instances = LabelGrid(width, height);

  const auto& skel = scene.skeleton;
  const auto& tmpl = synth_detail::template_limbs();
  const double radius = default_radius(width, height);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kJitter = 10.0 * std::numbers::pi / 180.0;

  for (int p = 0; p < n_persons; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < opt.max_attempts && !placed; ++attempt) {
      ScenePerson person;
      person.scale = 0.5 + 1.5 * unit(rng);
      // Joint offsets relative to the head, with accumulated angle jitter.
      std::vector<Vec2> rel(static_cast<std::size_t>(skel.joints()));
      std::vector<double> angle(static_cast<std::size_t>(skel.joints()), 0.0);
      for (std::size_t li = 0; li < skel.limbs().size(); ++li) {
        const Limb limb = skel.limbs()[li];
        const double a = angle[static_cast<std::size_t>(limb.parent)] + (2.0 * unit(rng) - 1.0) * kJitter;
        angle[static_cast<std::size_t>(limb.child)] = a;
        rel[static_cast<std::size_t>(limb.child)] =
            rel[static_cast<std::size_t>(limb.parent)] + synth_detail::rotate(tmpl[li] * person.scale, a);
      }
      double umin = 0, umax = 0, vmin = 0, vmax = 0;
      for (const auto& r : rel) {
        umin = std::min(umin, r.du);
        umax = std::max(umax, r.du);
        vmin = std::min(vmin, r.dv);
        vmax = std::max(vmax, r.dv);
      }
      const double margin = 2.0;
      const double lo_u = margin - umin, hi_u = width - 1 - margin - umax;
      const double lo_v = margin - vmin, hi_v = height - 1 - margin - vmax;
      if (hi_u < lo_u || hi_v < lo_v) continue;
      const double ru = lo_u + (hi_u - lo_u) * unit(rng);
      const double rv = lo_v + (hi_v - lo_v) * unit(rng);
      for (const auto& r : rel) person.joints.push_back({{std::round(ru + r.du), std::round(rv + r.dv)}, true});

      if (opt.overlap == Overlap::Forbidden) {
        bool clash = false;
        auto trial = scene.persons;
        trial.push_back(person);
        for (std::size_t q = 0; q < trial.size() && !clash; ++q)
          for (int k = 0; k < skel.joints() && !clash; ++k)
            if (hough_support(trial, q, k, width, height, radius) < opt.min_support) clash = true;
        if (clash) continue;
        for (const auto& c : synth_detail::capsules()) {
          const double r = std::max(1.5, c.radius * person.scale) + opt.gap;
          synth_detail::for_each_capsule_pixel(person.joints[static_cast<std::size_t>(c.a)].position,
                                               person.joints[static_cast<std::size_t>(c.b)].position, r, width,
                                               height, [&](int u, int v) {
                                                 if (scene.instances(u, v) > 0) clash = true;
                                               });
          if (clash) break;
        }
        if (clash) continue;
      }
      scene.persons.push_back(std::move(person));
      paint_person(scene.persons.back(), p + 1, scene.parts, scene.instances);
      placed = true;
    }
    if (!placed)
      throw PlacementError("generate_scene: could not place person " + std::to_string(p) + " after " +
                           std::to_string(opt.max_attempts) + " attempts");
  }

  // A joint is visible when it is inside the lattice and not painted over.
  for (std::size_t p = 0; p < scene.persons.size(); ++p)
    for (auto& j : scene.persons[p].joints) {
      const int u = static_cast<int>(j.position.u), v = static_cast<int>(j.position.v);
      j.visible = scene.instances.contains(u, v) && scene.instances(u, v) == static_cast<int>(p) + 1;
    }
  scene.dspf = ground_truth_dspf(scene.persons, scene.instances);
  return scene;
}

struct Targets {
  SemanticMap semantic;
  KeypointMaps keypoints;
  LimbMaps limbs;
  DspfPyramid dspf;
};

enum class FlowMode { Zero, Injected };

struct RenderOptions {
  double radius = 0.0;  // 0: default_radius of the lattice
  double sigma = 9.0;
  int levels = 4;
  FlowMode flows = FlowMode::Zero;
};

/// Smooth synthetic feature flows (sub-pixel amplitude, one per level 1..L-1).
inline std::vector<VectorField2> injected_flows(int width, int height, int levels, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<VectorField2> flows;
  for (int l = 1; l < levels; ++l) {
    const int w = width >> (l - 1), h = height >> (l - 1);
    const double amp = 0.5 + unit(rng), phase = 2.0 * std::numbers::pi * unit(rng);
    const double fu = 2.0 * std::numbers::pi / w * (1.0 + 2.0 * unit(rng));
    const double fv = 2.0 * std::numbers::pi / h * (1.0 + 2.0 * unit(rng));
    VectorField2 f(w, h);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) f(u, v) = {amp * std::sin(fu * u + fv * v + phase), amp * std::cos(fv * v - fu * u + phase)};
    flows.push_back(std::move(f));
  }
  return flows;
}

/// Ground-truth heatmaps (radius-R disks), nearest-joint offsets, limb maps,
/// one-hot semantics and an exactly decomposed DSPF pyramid.
inline Targets render_targets(const Scene& scene, const RenderOptions& opt = {}) {
  const int W = scene.width, H = scene.height;
  const double radius = opt.radius > 0.0 ? opt.radius : default_radius(W, H);
  const auto& skel = scene.skeleton;
  const int K = skel.joints();

  KeypointMaps km;
  km.radius = radius;
  for (int k = 0; k < K; ++k) {
    std::vector<GridPoint> joints;
    for (const auto& p : scene.persons)
      if (p.joints[static_cast<std::size_t>(k)].visible) joints.push_back(p.joints[static_cast<std::size_t>(k)].position);
    ScalarField m(W, H);
    VectorField2 o(W, H);
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        double best = std::numeric_limits<double>::infinity();
        const GridPoint here{static_cast<double>(u), static_cast<double>(v)};
        for (const auto& j : joints) {
          const double d = distance(here, j);
          if (d < best) {
            best = d;
            o(u, v) = {j.u - u, j.v - v};
          }
        }
        if (best <= radius) m(u, v) = 1.0;
      }
    km.heatmaps.push_back(std::move(m));
    km.offsets.push_back(std::move(o));
  }

  LimbMaps lm;
  lm.sigma = opt.sigma;
  for (const auto& limb : skel.limbs()) {
    ScalarField q(W, H);
    for (const auto& p : scene.persons) {
      const auto& a = p.joints[static_cast<std::size_t>(limb.parent)];
      const auto& b = p.joints[static_cast<std::size_t>(limb.child)];
      if (a.visible && b.visible) render_limb_into(q, a.position, b.position, opt.sigma);
    }
    lm.maps.push_back(std::move(q));
  }

  std::vector<VectorField2> flows;
  if (opt.flows == FlowMode::Injected) flows = injected_flows(W, H, opt.levels, scene.seed);
  return {SemanticMap::one_hot(scene.parts, kPartClasses), std::move(km), std::move(lm),
          decompose_dspf(scene.dspf, opt.levels, std::move(flows))};
}

struct NoiseSpec {
  double offset_sigma = 0.0;
  double heatmap_sigma = 0.0;
  double drop_prob = 0.0;
  std::uint64_t seed = 0;

  bool is_zero() const { return offset_sigma == 0.0 && heatmap_sigma == 0.0 && drop_prob == 0.0; }
};

/// Seeded corruption of rendered targets:
///   - each keypoint's nearest-joint region drops out of M_k with drop_prob
///   - offsets of a keypoint region share one rounded Gaussian displacement (a
///     joint localisation error); the finest DSPF residue gets i.i.d. Gaussian noise
///   - heatmaps and limb maps get additive Gaussian noise clamped to [0,1]
inline Targets perturb_targets(Targets targets, const NoiseSpec& spec) {
  if (spec.offset_sigma < 0 || spec.heatmap_sigma < 0 || !(spec.drop_prob >= 0.0 && spec.drop_prob <= 1.0))
    throw InvalidInput("perturb_targets: invalid noise spec");
  if (spec.is_zero()) return targets;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> offset_noise(0.0, 1.0);
  std::normal_distribution<double> heat_noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto& km = targets.keypoints;
  for (int k = 0; k < km.categories(); ++k) {
    auto& m = km.heatmaps[static_cast<std::size_t>(k)];
    auto& o = km.offsets[static_cast<std::size_t>(k)];
    // Keypoint regions are identified by their vote target, in raster order of first appearance.
    struct Region {
      Vec2 shift;
      bool dropped;
    };
    std::map<std::pair<long, long>, Region> regions;
    if (std::all_of(m.values().begin(), m.values().end(), [](double x) { return x == 0.0; })) continue;
    for (int v = 0; v < m.height(); ++v)
      for (int u = 0; u < m.width(); ++u) {
        const Vec2 off = o(u, v);
        const std::pair<long, long> key{std::lround(u + off.du), std::lround(v + off.dv)};
        auto it = regions.find(key);
        if (it == regions.end()) {
          // Whole-pixel shift: votes stay concentrated on one lattice cell.
          Region r{{std::round(spec.offset_sigma * offset_noise(rng)), std::round(spec.offset_sigma * offset_noise(rng))},
                   unit(rng) < spec.drop_prob};
          it = regions.emplace(key, r).first;
        }
        if (it->second.dropped) m(u, v) = 0.0;
        o(u, v) += it->second.shift;
      }
  }

  if (spec.heatmap_sigma > 0.0) {
    auto add_noise = [&](ScalarField& f) {
      for (auto& x : f.values()) x = std::clamp(x + spec.heatmap_sigma * heat_noise(rng), 0.0, 1.0);
    };
    for (auto& m : km.heatmaps) add_noise(m);
    for (auto& q : targets.limbs.maps) add_noise(q);
  }

  if (spec.offset_sigma > 0.0) {
    auto& res = targets.dspf.residue(1);
    for (auto& d : res.values()) d += Vec2{spec.offset_sigma * offset_noise(rng), spec.offset_sigma * offset_noise(rng)};
  }
  return targets;
}

}  // namespace partgraph
