#pragma once

// Evaluation metrics: mIoU, part-based AP (AP^p) and its volume average,
// PCP_50 and OKS-based pose mAP. Multi-scene variants pool detections across
// scenes before building precision-recall curves.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "partgraph/fields.hpp"
#include "partgraph/matching.hpp"

namespace partgraph {

/// Dataset-level mean IoU over classes 0..P-1 that occur in prediction or
/// ground truth (classes absent from both are skipped).
class MiouAccumulator {
 public:
  explicit MiouAccumulator(int classes) : inter_(static_cast<std::size_t>(classes), 0), uni_(static_cast<std::size_t>(classes), 0) {}

  void add(const LabelGrid& pred, const LabelGrid& gt) {
    if (!pred.same_shape(gt)) throw InvalidInput("miou: lattice mismatch");
    const int P = static_cast<int>(inter_.size());
    std::vector<long> pc(inter_.size(), 0), gc(inter_.size(), 0), both(inter_.size(), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int p = pred.values()[i], g = gt.values()[i];
      if (p < 0 || p >= P || g < 0 || g >= P) throw InvalidInput("miou: label out of range");
      ++pc[static_cast<std::size_t>(p)];
      ++gc[static_cast<std::size_t>(g)];
      if (p == g) ++both[static_cast<std::size_t>(p)];
    }
    for (std::size_t c = 0; c < inter_.size(); ++c) {
      inter_[c] += both[c];
      uni_[c] += pc[c] + gc[c] - both[c];
    }
  }

  double value() const {
    double sum = 0.0;
    int n = 0;
    for (std::size_t c = 0; c < inter_.size(); ++c) {
      if (uni_[c] == 0) continue;
      sum += static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
      ++n;
    }
    return n ? sum / n : 1.0;
  }

 private:
  std::vector<long> inter_;
  std::vector<long> uni_;
};

inline double miou(const LabelGrid& pred, const LabelGrid& gt, int classes) {
  MiouAccumulator acc(classes);
  acc.add(pred, gt);
  return acc.value();
}

/// Instance-level labelling of one scene: part grid, instance grid (ids
/// 1..count, 0 none) and a confidence per instance (ignored for ground truth).
struct InstanceLabeling {
  LabelGrid parts;
  LabelGrid instances;
  int count = 0;
  std::vector<double> scores;
};

/// Part-wise IoU table between predicted and ground-truth instances.
class PartOverlap {
 public:
  PartOverlap(const InstanceLabeling& pred, const InstanceLabeling& gt, int classes)
      : classes_(classes), pred_count_(pred.count), gt_count_(gt.count) {
    if (!pred.parts.same_shape(gt.parts) || !pred.instances.same_shape(gt.instances) ||
        !pred.parts.same_shape(pred.instances))
      throw InvalidInput("part overlap: lattice mismatch");
    pred_area_.assign(static_cast<std::size_t>(pred_count_ * classes), 0);
    gt_area_.assign(static_cast<std::size_t>(gt_count_ * classes), 0);
    inter_.assign(static_cast<std::size_t>(pred_count_ * gt_count_ * classes), 0);
    for (std::size_t i = 0; i < pred.parts.size(); ++i) {
      const int pi = pred.instances.values()[i], pp = pred.parts.values()[i];
      const int gi = gt.instances.values()[i], gp = gt.parts.values()[i];
      const bool pv = pi > 0 && pi <= pred_count_ && pp > 0 && pp < classes;
      const bool gv = gi > 0 && gi <= gt_count_ && gp > 0 && gp < classes;
      if (pv) ++pred_area_[idx(pi - 1, pp)];
      if (gv) ++gt_area_[idx(gi - 1, gp)];
      if (pv && gv && pp == gp) ++inter_[static_cast<std::size_t>(((pi - 1) * gt_count_ + (gi - 1)) * classes + pp)];
    }
  }

  int pred_count() const { return pred_count_; }
  int gt_count() const { return gt_count_; }

  bool gt_has_part(int gt, int part) const { return gt_area_[idx(gt, part)] > 0; }

  int gt_part_count(int gt) const {
    int n = 0;
    for (int c = 1; c < classes_; ++c) n += gt_has_part(gt, c);
    return n;
  }

  double part_iou(int pred, int gt, int part) const {
    const long in = inter_[static_cast<std::size_t>((pred * gt_count_ + gt) * classes_ + part)];
    const long un = pred_area_[idx(pred, part)] + gt_area_[idx(gt, part)] - in;
    return un > 0 ? static_cast<double>(in) / static_cast<double>(un) : 0.0;
  }

  /// Mean part IoU over the part classes present in the ground-truth instance.
  double similarity(int pred, int gt) const {
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < classes_; ++c) {
      if (!gt_has_part(gt, c)) continue;
      sum += part_iou(pred, gt, c);
      ++n;
    }
    return n ? sum / n : 0.0;
  }

 private:
  std::size_t idx(int inst, int part) const { return static_cast<std::size_t>(inst * classes_ + part); }

  int classes_;
  int pred_count_;
  int gt_count_;
  std::vector<long> pred_area_;
  std::vector<long> gt_area_;
  std::vector<long> inter_;
};

/// All-point interpolated average precision from detections sorted by
/// descending confidence.
inline double average_precision(const std::vector<bool>& tp_sorted, int total_gt) {
  if (total_gt == 0) return tp_sorted.empty() ? 1.0 : 0.0;
  std::vector<double> prec, rec;
  int tp = 0;
  for (std::size_t i = 0; i < tp_sorted.size(); ++i) {
    tp += tp_sorted[i];
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / total_gt);
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

namespace detail {

struct Detection {
  double score;
  std::size_t scene;
  int index;
};

// Orders detections by descending score, then scene, then index.
inline std::vector<Detection> ranked(const std::vector<std::vector<double>>& scores) {
  std::vector<Detection> d;
  for (std::size_t s = 0; s < scores.size(); ++s)
    for (std::size_t i = 0; i < scores[s].size(); ++i) d.push_back({scores[s][i], s, static_cast<int>(i)});
  std::stable_sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return d;
}

// Greedy one-to-one matching: each detection takes the unmatched truth with
// the highest similarity, if that similarity exceeds (or reaches) the threshold.
template <typename Sim>
std::vector<bool> greedy_detections(const std::vector<Detection>& dets, const std::vector<int>& truth_counts,
                                    double threshold, bool inclusive, Sim&& sim,
                                    std::vector<std::vector<int>>* truth_match = nullptr) {
  std::vector<std::vector<int>> matched(truth_counts.size());
  for (std::size_t s = 0; s < truth_counts.size(); ++s) matched[s].assign(static_cast<std::size_t>(truth_counts[s]), -1);
  std::vector<bool> tp;
  for (const auto& d : dets) {
    int best = -1;
    double best_sim = -1.0;
    for (int g = 0; g < truth_counts[d.scene]; ++g) {
      if (matched[d.scene][static_cast<std::size_t>(g)] >= 0) continue;
      const double s = sim(d.scene, d.index, g);
      if (s > best_sim) {
        best_sim = s;
        best = g;
      }
    }
    const bool hit = best >= 0 && (inclusive ? best_sim >= threshold : best_sim > threshold);
    if (hit) matched[d.scene][static_cast<std::size_t>(best)] = d.index;
    tp.push_back(hit);
  }
  if (truth_match) *truth_match = std::move(matched);
  return tp;
}

}  // namespace detail

struct PartApResult {
  std::map<int, double> ap;  // keyed by threshold in percent (10..90)
  double ap_vol = 0.0;
};

/// AP^p over a set of scenes at the given IoU thresholds (a prediction is a
/// true positive when its mean part IoU with an unmatched ground truth
/// exceeds the threshold).
inline double ap_part_at(const std::vector<InstanceLabeling>& preds, const std::vector<InstanceLabeling>& gts,
                         int classes, double threshold, std::vector<std::vector<int>>* gt_match = nullptr) {
  if (preds.size() != gts.size()) throw InvalidInput("ap_part: scene count mismatch");
  std::vector<PartOverlap> overlaps;
  std::vector<std::vector<double>> scores;
  std::vector<int> counts;
  int total = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    if (static_cast<int>(preds[s].scores.size()) != preds[s].count)
      throw InvalidInput("ap_part: every predicted instance needs a score");
    overlaps.emplace_back(preds[s], gts[s], classes);
    scores.push_back(preds[s].scores);
    counts.push_back(gts[s].count);
    total += gts[s].count;
  }
  const auto dets = detail::ranked(scores);
  const auto tp = detail::greedy_detections(
      dets, counts, threshold, false, [&](std::size_t s, int i, int g) { return overlaps[s].similarity(i, g); }, gt_match);
  return average_precision(tp, total);
}

inline PartApResult ap_part(const std::vector<InstanceLabeling>& preds, const std::vector<InstanceLabeling>& gts,
                            int classes) {
  PartApResult r;
  double sum = 0.0;
  for (int t = 10; t <= 90; t += 10) {
    const double ap = ap_part_at(preds, gts, classes, t / 100.0);
    r.ap[t] = ap;
    sum += ap;
  }
  r.ap_vol = sum / 9.0;
  return r;
}

/// Share of ground-truth parts with IoU > 0.5 against the prediction matched
/// to their instance at the 0.5 AP^p threshold.
inline double pcp50(const std::vector<InstanceLabeling>& preds, const std::vector<InstanceLabeling>& gts, int classes) {
  std::vector<std::vector<int>> match;
  ap_part_at(preds, gts, classes, 0.5, &match);
  long correct = 0, total = 0;
  for (std::size_t s = 0; s < gts.size(); ++s) {
    const PartOverlap ov(preds[s], gts[s], classes);
    for (int g = 0; g < gts[s].count; ++g) {
      total += ov.gt_part_count(g);
      const int p = match[s][static_cast<std::size_t>(g)];
      if (p < 0) continue;
      for (int c = 1; c < classes; ++c)
        if (ov.gt_has_part(g, c) && ov.part_iou(p, g, c) > 0.5) ++correct;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 1.0;
}

/// Ground-truth pose for OKS: per-category joint (nullopt when not visible).
struct GtPose {
  std::vector<std::optional<GridPoint>> joints;

  double scale() const {
    double umin = 0, umax = 0, vmin = 0, vmax = 0;
    bool any = false;
    for (const auto& j : joints) {
      if (!j) continue;
      if (!any) {
        umin = umax = j->u;
        vmin = vmax = j->v;
        any = true;
      }
      umin = std::min(umin, j->u);
      umax = std::max(umax, j->u);
      vmin = std::min(vmin, j->v);
      vmax = std::max(vmax, j->v);
    }
    const double s = std::sqrt((umax - umin) * (vmax - vmin));
    return s > 0.0 ? s : 1.0;
  }
};

/// Object keypoint similarity over the ground truth's visible joints;
/// predicted joints that are missing contribute zero.
inline double oks(const PoseInstance& pred, const GtPose& gt, const std::vector<double>& kappa) {
  const double s = gt.scale();
  double sum = 0.0;
  int visible = 0;
  for (std::size_t k = 0; k < gt.joints.size(); ++k) {
    if (!gt.joints[k]) continue;
    ++visible;
    if (k >= pred.joints.size() || !pred.joints[k]) continue;
    const double d = distance(pred.joints[k]->position, *gt.joints[k]);
    const double kk = kappa.at(k);
    sum += std::exp(-d * d / (2.0 * s * s * kk * kk));
  }
  return visible ? sum / visible : 0.0;
}

/// COCO-style pose mAP: AP at OKS thresholds 0.50..0.95 (step 0.05), averaged.
inline double pose_map_oks(const std::vector<std::vector<PoseInstance>>& preds, const std::vector<std::vector<GtPose>>& gts,
                           const std::vector<double>& kappa) {
  if (preds.size() != gts.size()) throw InvalidInput("pose_map_oks: scene count mismatch");
  for (double k : kappa)
    if (!(k > 0.0)) throw InvalidInput("pose_map_oks: kappa must be positive");
  std::vector<std::vector<double>> scores;
  std::vector<int> counts;
  int total = 0;
  std::vector<std::vector<std::vector<double>>> table(preds.size());
  for (std::size_t s = 0; s < preds.size(); ++s) {
    std::vector<double> sc;
    for (const auto& p : preds[s]) sc.push_back(p.score);
    scores.push_back(std::move(sc));
    counts.push_back(static_cast<int>(gts[s].size()));
    total += static_cast<int>(gts[s].size());
    for (const auto& p : preds[s]) {
      std::vector<double> row;
      for (const auto& g : gts[s]) row.push_back(oks(p, g, kappa));
      table[s].push_back(std::move(row));
    }
  }
  const auto dets = detail::ranked(scores);
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double thr = 0.5 + 0.05 * i;
    const auto tp = detail::greedy_detections(dets, counts, thr, true, [&](std::size_t s, int p, int g) {
      return table[s][static_cast<std::size_t>(p)][static_cast<std::size_t>(g)];
    });
    sum += average_precision(tp, total);
  }
  return sum / 10.0;
}

struct EvalReport {
  double miou = 0.0;
  PartApResult ap_p;
  double pcp50 = 0.0;
  double pose_map = 0.0;
};

}  // namespace partgraph
