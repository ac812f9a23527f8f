#pragma once

// Central finite-difference checks for the two analytic backward passes.
// Probes are resampled until they sit away from the kinks of the piecewise
// linear maps (cell boundaries for the warp, activation switches and the
// score gate for the matcher), where a finite difference is meaningless.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "partgraph/dspf.hpp"
#include "partgraph/fields.hpp"
#include "partgraph/matching.hpp"

namespace partgraph {

struct GradcheckOptions {
  int probes = 100;
  std::uint64_t seed = 0;
  int max_size = 4;            // matcher: rows, cols in 1..max_size; warp: coarse lattice side
  double step = 1e-6;
  double margin = 1e-3;        // required distance to any switching boundary
  SolverConfig solver{0.1, 20, 20, 0.0, 0.5, 0.05};  // tol 0: fixed unroll
  int max_attempts = 100000;
};

struct GradcheckResult {
  int probes = 0;
  int rejected = 0;  // resampled candidates that were too close to a kink
  double max_rel_error = 0.0;
};

namespace detail {

inline double rel_error(double diff2, double ref2) { return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-8); }

inline double frac_distance(double x) {
  const double f = x - std::floor(x);
  return std::min(f, 1.0 - f);
}

}  // namespace detail

/// warp_backward (source and flow gradients) against finite differences of
/// sum(g . warp_with_flow(source, flow)) for random Vec2 fields.
inline GradcheckResult gradcheck_warp(const GradcheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  std::uniform_real_distribution<double> shift(-1.5, 1.5);
  std::uniform_int_distribution<int> side(1, std::max(1, opt.max_size));
  GradcheckResult out;

  for (int p = 0; p < opt.probes; ++p) {
    const int w = side(rng), h = side(rng);
    VectorField2 src(w, h), up(2 * w, 2 * h), flow(2 * w, 2 * h);
    for (auto& x : src.values()) x = {val(rng), val(rng)};
    for (auto& x : up.values()) x = {val(rng), val(rng)};
    for (int v = 0; v < flow.height(); ++v)
      for (int u = 0; u < flow.width(); ++u) {
        Vec2 f;
        int tries = 0;
        do {
          f = {shift(rng), shift(rng)};
          if (++tries > opt.max_attempts) throw InvalidInput("gradcheck_warp: cannot sample a boundary-free flow");
          ++out.rejected;
        } while (detail::frac_distance(u + f.du) < opt.margin || detail::frac_distance(v + f.dv) < opt.margin);
        --out.rejected;
        flow(u, v) = f;
      }

    auto loss = [&](const VectorField2& s, const VectorField2& fl) {
      const auto y = warp_with_flow(s, fl);
      double l = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) l += detail::dot(up.values()[i], y.values()[i]);
      return l;
    };
    const auto g = warp_backward(src, flow, up);

    double diff2 = 0.0, ref2 = 0.0;
    auto probe = [&](double& coord, double analytic, auto&& eval) {
      const double keep = coord;
      coord = keep + opt.step;
      const double lp = eval();
      coord = keep - opt.step;
      const double lm = eval();
      coord = keep;
      const double fd = (lp - lm) / (2.0 * opt.step);
      diff2 += (analytic - fd) * (analytic - fd);
      ref2 += fd * fd;
    };
    VectorField2 s = src, fl = flow;
    auto eval = [&] { return loss(s, fl); };
    for (std::size_t i = 0; i < s.size(); ++i) {
      probe(s.values()[i].du, g.source.values()[i].du, eval);
      probe(s.values()[i].dv, g.source.values()[i].dv, eval);
    }
    for (std::size_t i = 0; i < fl.size(); ++i) {
      probe(fl.values()[i].du, g.flow.values()[i].du, eval);
      probe(fl.values()[i].dv, g.flow.values()[i].dv, eval);
    }
    out.max_rel_error = std::max(out.max_rel_error, detail::rel_error(diff2, ref2));
    ++out.probes;
  }
  return out;
}

/// matcher_backward against finite differences of sum(G * pgd_solve(A).y).
inline GradcheckResult gradcheck_matcher(const GradcheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> side(1, std::max(1, opt.max_size));
  GradcheckResult out;

  for (int p = 0; p < opt.probes; ++p) {
    Matrix a;
    PgdResult res;
    for (int tries = 0;; ++tries) {
      if (tries > opt.max_attempts) throw InvalidInput("gradcheck_matcher: cannot sample a kink-free probe");
      a = Matrix(side(rng), side(rng));
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = unit(rng);
      const bool near_gate = ((a.array() - opt.solver.score_gate).abs() < opt.margin).any();
      if (!near_gate) {
        res = pgd_solve(a, opt.solver);
        if (res.trace.min_margin() > opt.margin) break;
      }
      ++out.rejected;
    }
    Matrix g(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    const Matrix analytic = matcher_backward(res.trace, g);

    double diff2 = 0.0, ref2 = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      Matrix ap = a, am = a;
      ap.data()[i] += opt.step;
      am.data()[i] -= opt.step;
      const double lp = g.cwiseProduct(pgd_solve(ap, opt.solver, false).y).sum();
      const double lm = g.cwiseProduct(pgd_solve(am, opt.solver, false).y).sum();
      const double fd = (lp - lm) / (2.0 * opt.step);
      diff2 += (analytic.data()[i] - fd) * (analytic.data()[i] - fd);
      ref2 += fd * fd;
    }
    out.max_rel_error = std::max(out.max_rel_error, detail::rel_error(diff2, ref2));
    ++out.probes;
  }
  return out;
}

}  // namespace partgraph
