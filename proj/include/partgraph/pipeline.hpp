#pragma once

// Orchestration: targets -> keypoints -> limb scores -> matching -> assembly
// -> pixel grouping, plus evaluation against a synthetic scene and timing.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "partgraph/dspf.hpp"
#include "partgraph/fields.hpp"
#include "partgraph/grouping.hpp"
#include "partgraph/keypoints.hpp"
#include "partgraph/limbs.hpp"
#include "partgraph/matching.hpp"
#include "partgraph/metrics.hpp"
#include "partgraph/synth.hpp"

namespace partgraph {

/// Error raised by a pipeline stage; what() is prefixed with the stage name.
struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& message)
      : std::runtime_error(stage_name + ": " + message), stage(std::move(stage_name)) {}
  std::string stage;
};

enum class MatcherKind { Hungarian, GreedySorted, GreedyRow, Pgd };

inline const char* matcher_name(MatcherKind m) {
  switch (m) {
    case MatcherKind::Hungarian: return "hungarian";
    case MatcherKind::GreedySorted: return "greedy_sorted";
    case MatcherKind::GreedyRow: return "greedy_row";
    case MatcherKind::Pgd: return "pgd";
  }
  return "?";
}

inline MatcherKind parse_matcher(const std::string& name) {
  for (auto m : {MatcherKind::Hungarian, MatcherKind::GreedySorted, MatcherKind::GreedyRow, MatcherKind::Pgd})
    if (name == matcher_name(m)) return m;
  throw InvalidInput("unknown matcher '" + name + "'");
}

struct PipelineConfig {
  MatcherKind matcher = MatcherKind::Pgd;
  SolverConfig solver;
  double keypoint_threshold = 0.7;
  double radius = 0.0;  // 0: take the radius carried by the keypoint maps
  double r_nms = 0.0;   // 0: radius / 4
  double min_peak_score = 0.01;
  int limb_samples = 10;
  SkeletonSpec skeleton = SkeletonSpec::default_human();

  void validate() const {
    solver.validate();
    if (!(keypoint_threshold >= 0.0 && keypoint_threshold <= 1.0))
      throw InvalidInput("pipeline: keypoint threshold must lie in [0,1]");
    if (radius < 0.0 || r_nms < 0.0) throw InvalidInput("pipeline: radii must be nonnegative");
    if (limb_samples < 2) throw InvalidInput("pipeline: need at least 2 limb samples");
  }
};

struct Diagnostics {
  std::map<std::string, double> stage_ms;
  std::vector<int> peaks_per_category;
  std::vector<int> keypoints_per_category;
  std::vector<double> limb_weight_gap;  // optimal (Hungarian) minus chosen matching weight
  int poses = 0;
  bool foreground_without_poses = false;
};

struct PipelineResult {
  InstanceParsing parsing;
  KeypointSet keypoints;
  Diagnostics diagnostics;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* name, Diagnostics& diag, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      diag.stage_ms[name] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    } else {
      auto r = fn();
      diag.stage_ms[name] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

inline Matching solve_limb(const Matrix& a, const PipelineConfig& cfg) {
  switch (cfg.matcher) {
    case MatcherKind::Hungarian: return hungarian_solve(a, cfg.solver.score_gate);
    case MatcherKind::GreedySorted: return greedy_match(a, GreedyVariant::ScoreSorted, cfg.solver.score_gate);
    case MatcherKind::GreedyRow: return greedy_match(a, GreedyVariant::RowSequential, cfg.solver.score_gate);
    case MatcherKind::Pgd: {
      const auto res = pgd_solve(a, cfg.solver, false);
      return round_assignment(res.y, a, cfg.solver.round_threshold, cfg.solver.score_gate);
    }
  }
  throw InvalidInput("unknown matcher");
}

/// Runs the full bottom-up composition on one image's targets.
inline PipelineResult run_pipeline(const KeypointMaps& keypoint_maps, const LimbMaps& limb_maps,
                                   const SemanticMap& semantic, const VectorField2& dspf, const PipelineConfig& cfg) {
  cfg.validate();
  PipelineResult out;
  auto& diag = out.diagnostics;
  const int K = cfg.skeleton.joints();

  const LabelGrid labels = detail::run_stage("labels", diag, [&] {
    if (semantic.width() != dspf.width() || semantic.height() != dspf.height())
      throw InvalidInput("semantic map and DSPF lattices differ");
    return argmax_labels(semantic);
  });

  const double radius = cfg.radius > 0.0 ? cfg.radius : keypoint_maps.radius;
  const double r_nms = cfg.r_nms > 0.0 ? cfg.r_nms : radius / 4.0;

  std::vector<std::vector<Peak>> peaks;
  detail::run_stage("hough", diag, [&] {
    if (keypoint_maps.categories() != K || static_cast<int>(keypoint_maps.offsets.size()) != K)
      throw InvalidInput("keypoint maps do not match the skeleton");
    for (int k = 0; k < K; ++k) {
      const auto h = hough_score_map(keypoint_maps.heatmaps[static_cast<std::size_t>(k)],
                                     keypoint_maps.offsets[static_cast<std::size_t>(k)], radius);
      if (!h.same_shape(dspf)) throw InvalidInput("keypoint maps and DSPF lattices differ");
      peaks.push_back(extract_peaks(h, cfg.min_peak_score, r_nms));
      diag.peaks_per_category.push_back(static_cast<int>(peaks.back().size()));
    }
  });

  out.keypoints = detail::run_stage("candidates", diag, [&] {
    return select_candidates(peaks, dspf, &labels, {cfg.keypoint_threshold, r_nms});
  });
  for (int k = 0; k < K; ++k) diag.keypoints_per_category.push_back(static_cast<int>(out.keypoints.count(k)));

  const auto scores = detail::run_stage("limbs", diag, [&] {
    return build_score_matrices(limb_maps, out.keypoints, cfg.skeleton, cfg.limb_samples);
  });

  std::vector<Matching> assignments;
  detail::run_stage("matching", diag, [&] {
    for (const auto& sm : scores) assignments.push_back(solve_limb(sm.values, cfg));
  });
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& a = scores[i].values;
    diag.limb_weight_gap.push_back(hungarian_solve(a, cfg.solver.score_gate).weight(a) - assignments[i].weight(a));
  }

  auto poses = detail::run_stage("assembly", diag, [&] { return assemble_poses(assignments, out.keypoints, cfg.skeleton); });
  diag.poses = static_cast<int>(poses.size());

  out.parsing = detail::run_stage("grouping", diag, [&] { return group_pixels(labels, dspf, std::move(poses)); });
  diag.foreground_without_poses = out.parsing.foreground_without_poses;
  return out;
}

inline PipelineResult run_pipeline(const Targets& targets, const PipelineConfig& cfg) {
  const VectorField2 d = compose_dspf(targets.dspf);
  return run_pipeline(targets.keypoints, targets.limbs, targets.semantic, d, cfg);
}

// --- evaluation against synthetic ground truth ---------------------------

inline InstanceLabeling predicted_labeling(const InstanceParsing& p) {
  InstanceLabeling l{p.parts, p.instances, static_cast<int>(p.poses.size()), {}};
  for (const auto& pose : p.poses) l.scores.push_back(pose.score);
  return l;
}

inline InstanceLabeling truth_labeling(const Scene& s) {
  return {s.parts, s.instances, static_cast<int>(s.persons.size()), std::vector<double>(s.persons.size(), 1.0)};
}

/// Persons with at least one visible joint.
inline std::vector<GtPose> truth_poses(const Scene& s) {
  std::vector<GtPose> out;
  for (const auto& p : s.persons) {
    GtPose g;
    bool any = false;
    for (const auto& j : p.joints) {
      g.joints.push_back(j.visible ? std::optional<GridPoint>(j.position) : std::nullopt);
      any = any || j.visible;
    }
    if (any) out.push_back(std::move(g));
  }
  return out;
}

inline constexpr double kDefaultKappa = 0.1;

/// Suite-level metrics; detections are pooled across scenes.
inline EvalReport evaluate(const std::vector<const InstanceParsing*>& preds, const std::vector<const Scene*>& scenes) {
  if (preds.size() != scenes.size()) throw InvalidInput("evaluate: scene count mismatch");
  MiouAccumulator acc(kPartClasses);
  std::vector<InstanceLabeling> pl, gl;
  std::vector<std::vector<PoseInstance>> pp;
  std::vector<std::vector<GtPose>> gp;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    acc.add(preds[i]->parts, scenes[i]->parts);
    pl.push_back(predicted_labeling(*preds[i]));
    gl.push_back(truth_labeling(*scenes[i]));
    pp.push_back(preds[i]->poses);
    gp.push_back(truth_poses(*scenes[i]));
  }
  const int K = scenes.empty() ? 0 : scenes.front()->skeleton.joints();
  EvalReport r;
  r.miou = acc.value();
  r.ap_p = ap_part(pl, gl, kPartClasses);
  r.pcp50 = pcp50(pl, gl, kPartClasses);
  r.pose_map = pose_map_oks(pp, gp, std::vector<double>(static_cast<std::size_t>(K), kDefaultKappa));
  return r;
}

inline EvalReport evaluate(const InstanceParsing& pred, const Scene& scene) { return evaluate({&pred}, {&scene}); }

/// Renders, corrupts and runs one scene.
inline PipelineResult run_scene(const Scene& scene, const NoiseSpec& noise, const PipelineConfig& cfg,
                                const RenderOptions& render = {}) {
  return run_pipeline(perturb_targets(render_targets(scene, render), noise), cfg);
}

// --- timing -----------------------------------------------------------------

struct BenchRow {
  int width = 0;
  int height = 0;
  int persons = 0;
  double median_ms = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median wall time of run_pipeline (targets prepared outside the timed
/// region) per lattice size and person count. Scenes allow overlap so that
/// any person count can be placed.
inline std::vector<BenchRow> benchmark(const std::vector<std::pair<int, int>>& sizes, const std::vector<int>& persons,
                                       int repeats, const PipelineConfig& cfg = {}, const NoiseSpec& noise = {},
                                       std::uint64_t seed = 0) {
  if (repeats < 10) throw InvalidInput("benchmark: repeats must be >= 10");
  std::vector<BenchRow> rows;
  for (auto [w, h] : sizes)
    for (int n : persons) {
      const Scene scene = generate_scene(n, w, h, seed, {Overlap::Allowed});
      NoiseSpec ns = noise;
      ns.seed = seed;
      const Targets t = perturb_targets(render_targets(scene), ns);
      const VectorField2 d = compose_dspf(t.dspf);
      std::vector<double> times;
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = run_pipeline(t.keypoints, t.limbs, t.semantic, d, cfg);
        times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        if (res.diagnostics.poses < 0) times.back() = 0;  // keep the result observable
      }
      rows.push_back({w, h, n, median(std::move(times))});
    }
  return rows;
}

}  // namespace partgraph
