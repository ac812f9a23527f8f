#pragma once

// Flow-guided warping and coarse-to-fine residual composition of the
// dense-to-sparse projection field (DSPF).
//
// Level numbering: level 1 is the finest lattice, level L the coarsest, and
// each level halves the previous one. A flow at level l lives on the level-l
// lattice and is measured in level-l pixels.

#include <cstddef>
#include <utility>
#include <vector>

#include "partgraph/fields.hpp"

namespace partgraph {

/// Upsamples `source` by 2 and resamples it at u + flow(u) for every pixel
/// u of the flow lattice. Works for feature channels and DSPFs alike.
template <typename T>
Field<T> warp_with_flow(const Field<T>& source, const VectorField2& flow) {
  if (flow.width() != 2 * source.width() || flow.height() != 2 * source.height())
    throw InvalidInput("warp_with_flow: flow lattice must be exactly 2x the source lattice");
  const Field<T> up = upsample_bilinear(source, 2);
  Field<T> out(flow.width(), flow.height());
  for (int v = 0; v < flow.height(); ++v)
    for (int u = 0; u < flow.width(); ++u) {
      const Vec2 f = flow(u, v);
      out(u, v) = bilinear_sample(up, {u + f.du, v + f.dv});
    }
  return out;
}

template <typename T>
struct WarpGradients {
  Field<T> source;
  VectorField2 flow;
};

/// Reverse-mode derivative of warp_with_flow. On integer lattice lines the
/// derivative of the piecewise-bilinear kernel is taken from the cell to the
/// right/below (floor convention).
template <typename T>
WarpGradients<T> warp_backward(const Field<T>& source, const VectorField2& flow, const Field<T>& upstream) {
  if (flow.width() != 2 * source.width() || flow.height() != 2 * source.height())
    throw InvalidInput("warp_backward: flow lattice must be exactly 2x the source lattice");
  if (!upstream.same_shape(flow)) throw InvalidInput("warp_backward: upstream gradient shape mismatch");

  const Field<T> up = upsample_bilinear(source, 2);
  Field<T> grad_up(up.width(), up.height());
  VectorField2 grad_flow(flow.width(), flow.height());

  for (int v = 0; v < flow.height(); ++v)
    for (int u = 0; u < flow.width(); ++u) {
      const T g = upstream(u, v);
      const Vec2 f = flow(u, v);
      const double us = u + f.du;
      const double vs = v + f.dv;
      const double fu = std::floor(us);
      const double fv = std::floor(vs);
      if (fu < -2.0 || fv < -2.0 || fu > up.width() + 1.0 || fv > up.height() + 1.0) continue;
      const int u0 = static_cast<int>(fu);
      const int v0 = static_cast<int>(fv);
      const double a = us - fu;
      const double b = vs - fv;

      const T x00 = up.at_or_zero(u0, v0);
      const T x10 = up.at_or_zero(u0 + 1, v0);
      const T x01 = up.at_or_zero(u0, v0 + 1);
      const T x11 = up.at_or_zero(u0 + 1, v0 + 1);

      const T d_du = (x10 - x00) * (1.0 - b) + (x11 - x01) * b;
      const T d_dv = (x01 - x00) * (1.0 - a) + (x11 - x10) * a;
      grad_flow(u, v) = {detail::dot(g, d_du), detail::dot(g, d_dv)};

      auto scatter = [&](int su, int sv, double w) {
        if (up.contains(su, sv)) grad_up(su, sv) += g * w;
      };
      scatter(u0, v0, (1.0 - a) * (1.0 - b));
      scatter(u0 + 1, v0, a * (1.0 - b));
      scatter(u0, v0 + 1, (1.0 - a) * b);
      scatter(u0 + 1, v0 + 1, a * b);
    }

  return {upsample_bilinear_transpose(grad_up, source.width(), source.height(), 2), std::move(grad_flow)};
}

/// Coarsest DSPF plus per-level residues and flows.
/// residue(l) and flow(l) are defined for l = 1..L-1 on the level-l lattice.
class DspfPyramid {
 public:
  DspfPyramid(VectorField2 coarsest, std::vector<VectorField2> residues, std::vector<VectorField2> flows)
      : coarsest_(std::move(coarsest)), residues_(std::move(residues)), flows_(std::move(flows)) {
    if (residues_.empty()) throw InvalidInput("DSPF pyramid needs at least 2 levels");
    if (residues_.size() != flows_.size()) throw InvalidInput("DSPF pyramid: residue/flow count mismatch");
    for (std::size_t i = 0; i < residues_.size(); ++i)
      if (!residues_[i].same_shape(flows_[i]))
        throw InvalidInput("DSPF pyramid: residue and flow differ in shape at a level");
    for (std::size_t i = 0; i + 1 < residues_.size(); ++i)
      if (residues_[i + 1].width() * 2 != residues_[i].width() ||
          residues_[i + 1].height() * 2 != residues_[i].height())
        throw InvalidInput("DSPF pyramid: levels must halve exactly");
    const auto& last = residues_.back();
    if (coarsest_.width() * 2 != last.width() || coarsest_.height() * 2 != last.height())
      throw InvalidInput("DSPF pyramid: coarsest level must be half of level L-1");
  }

  int levels() const { return static_cast<int>(residues_.size()) + 1; }
  const VectorField2& coarsest() const { return coarsest_; }
  const VectorField2& residue(int level) const { return residues_.at(static_cast<std::size_t>(level - 1)); }
  const VectorField2& flow(int level) const { return flows_.at(static_cast<std::size_t>(level - 1)); }
  VectorField2& residue(int level) { return residues_.at(static_cast<std::size_t>(level - 1)); }

 private:
  VectorField2 coarsest_;
  std::vector<VectorField2> residues_;
  std::vector<VectorField2> flows_;
};

/// D_l = residue_l + 2 * warp(D_{l+1}, F_l), from level L-1 down to level 1.
inline VectorField2 compose_dspf(const DspfPyramid& pyr) {
  VectorField2 d = pyr.coarsest();
  for (int l = pyr.levels() - 1; l >= 1; --l) {
    VectorField2 warped = warp_with_flow(d, pyr.flow(l));
    const auto& res = pyr.residue(l);
    for (std::size_t i = 0; i < warped.size(); ++i) warped.values()[i] = res.values()[i] + 2.0 * warped.values()[i];
    d = std::move(warped);
  }
  return d;
}

/// 2x2 average pooling (dimensions must be even).
template <typename T>
Field<T> downsample_average(const Field<T>& field) {
  if (field.width() % 2 != 0 || field.height() % 2 != 0)
    throw InvalidInput("downsample_average: dimensions must be even");
  Field<T> out(field.width() / 2, field.height() / 2);
  for (int v = 0; v < out.height(); ++v)
    for (int u = 0; u < out.width(); ++u)
      out(u, v) = (field(2 * u, 2 * v) + field(2 * u + 1, 2 * v) + field(2 * u, 2 * v + 1) +
                   field(2 * u + 1, 2 * v + 1)) *
                  0.25;
  return out;
}

/// Exact level-wise decomposition of a finest-level DSPF into a pyramid whose
/// composition reproduces it. Intermediate levels are 2x2 averages rescaled to
/// the coarser lattice; `flows` (finest first, L-1 entries) may be nonzero and
/// the residues compensate for them. Empty `flows` means zero flows.
inline DspfPyramid decompose_dspf(const VectorField2& target, int levels, std::vector<VectorField2> flows = {}) {
  if (levels < 2) throw InvalidInput("decompose_dspf: need at least 2 levels");
  const int div = 1 << (levels - 1);
  if (target.width() % div != 0 || target.height() % div != 0)
    throw InvalidInput("decompose_dspf: lattice must be divisible by 2^(L-1)");

  std::vector<VectorField2> targets{target};
  for (int l = 1; l < levels; ++l) {
    VectorField2 coarse = downsample_average(targets.back());
    for (auto& x : coarse.values()) x *= 0.5;
    targets.push_back(std::move(coarse));
  }
  if (flows.empty())
    for (int l = 1; l < levels; ++l)
      flows.emplace_back(targets[static_cast<std::size_t>(l - 1)].width(), targets[static_cast<std::size_t>(l - 1)].height());
  if (static_cast<int>(flows.size()) != levels - 1) throw InvalidInput("decompose_dspf: need L-1 flows");

  std::vector<VectorField2> residues(static_cast<std::size_t>(levels - 1));
  VectorField2 composed = targets.back();
  for (int l = levels - 1; l >= 1; --l) {
    const auto idx = static_cast<std::size_t>(l - 1);
    VectorField2 warped = warp_with_flow(composed, flows[idx]);
    VectorField2 res(warped.width(), warped.height());
    for (std::size_t i = 0; i < res.size(); ++i) {
      res.values()[i] = targets[idx].values()[i] - 2.0 * warped.values()[i];
      warped.values()[i] = res.values()[i] + 2.0 * warped.values()[i];
    }
    residues[idx] = std::move(res);
    composed = std::move(warped);
  }
  return DspfPyramid(std::move(targets.back()), std::move(residues), std::move(flows));
}

}  // namespace partgraph
