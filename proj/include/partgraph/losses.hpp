#pragma once

// Loss primitives for supervising pipeline components, including matching
// supervision routed through the differentiable solver.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "partgraph/fields.hpp"
#include "partgraph/matching.hpp"

namespace partgraph {

inline constexpr double kLogEpsilon = 1e-7;

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;
  bool empty_mask = false;
};

/// Mean over pixels of -sum_c t_c log(clamp(p_c, eps, 1 - eps)).
inline LossValue cross_entropy_map(const SemanticMap& pred, const SemanticMap& target, double eps = kLogEpsilon) {
  if (!(eps > 0.0 && eps < 0.5)) throw InvalidInput("cross_entropy_map: epsilon must lie in (0, 0.5)");
  if (pred.classes() != target.classes() || pred.width() != target.width() || pred.height() != target.height())
    throw InvalidInput("cross_entropy_map: shape mismatch");
  const std::size_t n = pred.channel(0).size();
  double sum = 0.0;
  for (int c = 0; c < pred.classes(); ++c) {
    const auto p = pred.channel(c).values();
    const auto t = target.channel(c).values();
    for (std::size_t i = 0; i < n; ++i)
      if (t[i] != 0.0) sum -= t[i] * std::log(std::clamp(p[i], eps, 1.0 - eps));
  }
  LossValue out;
  out.value = n ? sum / static_cast<double>(n) : 0.0;
  out.components["cross_entropy"] = out.value;
  return out;
}

/// Mean binary cross-entropy -[y* log y + (1 - y*) log(1 - y)] with clamped y.
inline LossValue binary_cross_entropy(const Matrix& y, const Matrix& target, double eps = kLogEpsilon) {
  if (y.rows() != target.rows() || y.cols() != target.cols()) throw InvalidInput("binary_cross_entropy: shape mismatch");
  if (!(eps > 0.0 && eps < 0.5)) throw InvalidInput("binary_cross_entropy: epsilon must lie in (0, 0.5)");
  LossValue out;
  if (y.size() == 0) return out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = std::clamp(y.data()[i], eps, 1.0 - eps);
    const double t = target.data()[i];
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  out.value = sum / static_cast<double>(y.size());
  out.components["bce"] = out.value;
  return out;
}

/// Mean over masked pixels of |du| + |dv|. An empty mask yields 0 and raises
/// the empty_mask flag.
inline LossValue l1_field(const VectorField2& pred, const VectorField2& target, const LabelGrid& mask) {
  if (!pred.same_shape(target) || !pred.same_shape(mask)) throw InvalidInput("l1_field: shape mismatch");
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask.values()[i] <= 0) continue;
    const Vec2 d = pred.values()[i] - target.values()[i];
    sum += std::abs(d.du) + std::abs(d.dv);
    ++n;
  }
  LossValue out;
  out.empty_mask = n == 0;
  out.value = n ? sum / static_cast<double>(n) : 0.0;
  out.components["l1"] = out.value;
  return out;
}

struct MatchingLoss {
  LossValue loss;
  Matrix grad_y;  // dLoss/dY, ready for matcher_backward
};

/// Binary cross-entropy between a relaxed assignment and the boolean target,
/// with its gradient w.r.t. Y (zero where Y was clamped).
inline MatchingLoss matching_loss(const Matrix& y, const Matrix& target, double eps = kLogEpsilon) {
  MatchingLoss out{binary_cross_entropy(y, target, eps), Matrix::Zero(y.rows(), y.cols())};
  const double n = static_cast<double>(std::max<Eigen::Index>(y.size(), 1));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = y.data()[i];
    if (p <= eps || p >= 1.0 - eps) continue;
    const double t = target.data()[i];
    out.grad_y.data()[i] = (-t / p + (1.0 - t) / (1.0 - p)) / n;
  }
  return out;
}

/// Uncertainty-weighted total sum_i exp(-s_i) L_i + s_i with s_i = log sigma_i^2.
inline double uncertainty_weight(const std::vector<double>& losses, const std::vector<double>& log_vars) {
  if (losses.size() != log_vars.size()) throw InvalidInput("uncertainty_weight: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i]) || !std::isfinite(log_vars[i])) throw InvalidInput("uncertainty_weight: non-finite input");
    total += std::exp(-log_vars[i]) * losses[i] + log_vars[i];
  }
  return total;
}

/// d total / d s_i = 1 - exp(-s_i) L_i.
inline std::vector<double> uncertainty_weight_grad(const std::vector<double>& losses, const std::vector<double>& log_vars) {
  if (losses.size() != log_vars.size()) throw InvalidInput("uncertainty_weight: size mismatch");
  std::vector<double> g(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) g[i] = 1.0 - std::exp(-log_vars[i]) * losses[i];
  return g;
}

}  // namespace partgraph
