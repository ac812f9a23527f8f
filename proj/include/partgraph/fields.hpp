#pragma once

// Grid-based field types, bilinear sampling and label extraction.
//
// Conventions used throughout the library:
//   - row-major storage, origin at the top-left pixel
//   - u is the column coordinate, v is the row coordinate
//   - sampling outside the lattice reads zeros (zero padding)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace partgraph {

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct GridPoint {
  double u = 0.0;
  double v = 0.0;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

inline double distance(GridPoint a, GridPoint b) { return std::hypot(a.u - b.u, a.v - b.v); }

struct Vec2 {
  double du = 0.0;
  double dv = 0.0;

  Vec2& operator+=(const Vec2& o) { du += o.du; dv += o.dv; return *this; }
  Vec2& operator-=(const Vec2& o) { du -= o.du; dv -= o.dv; return *this; }
  Vec2& operator*=(double s) { du *= s; dv *= s; return *this; }
  friend Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend Vec2 operator*(Vec2 a, double s) { return a *= s; }
  friend Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend bool operator==(const Vec2&, const Vec2&) = default;

  double norm() const { return std::hypot(du, dv); }
};

inline GridPoint operator+(GridPoint p, Vec2 d) { return {p.u + d.du, p.v + d.dv}; }

namespace detail {

inline double dot(double a, double b) { return a * b; }
inline double dot(const Vec2& a, const Vec2& b) { return a.du * b.du + a.dv * b.dv; }
inline bool finite(double a) { return std::isfinite(a); }
inline bool finite(const Vec2& a) { return std::isfinite(a.du) && std::isfinite(a.dv); }

}  // namespace detail

/// Dense 2-D grid of values of type T (double or Vec2), row-major.
template <typename T>
class Field {
 public:
  using value_type = T;

  Field() = default;
  Field(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw InvalidInput("field dimensions must be nonnegative");
    values_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Field(int width, int height, std::vector<T> values)
      : width_(width), height_(height), values_(std::move(values)) {
    if (width < 0 || height < 0) throw InvalidInput("field dimensions must be nonnegative");
    if (values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
      throw InvalidInput("field value count does not match width*height");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

  T& operator()(int u, int v) { return values_[index(u, v)]; }
  const T& operator()(int u, int v) const { return values_[index(u, v)]; }

  /// Zero outside the lattice.
  T at_or_zero(int u, int v) const { return contains(u, v) ? (*this)(u, v) : T{}; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  bool same_shape(const auto& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> values_;
};

using ScalarField = Field<double>;
using VectorField2 = Field<Vec2>;
using LabelGrid = Field<int>;

/// Multi-channel field stack sharing one lattice.
using MultiField = std::vector<ScalarField>;

/// Ordered list of multi-channel levels; level 0 is the finest.
class FeaturePyramid {
 public:
  explicit FeaturePyramid(std::vector<MultiField> levels) : levels_(std::move(levels)) {
    if (levels_.size() < 2) throw InvalidInput("feature pyramid needs at least 2 levels");
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      if (levels_[l].empty()) throw InvalidInput("feature pyramid level has no channels");
      for (const auto& ch : levels_[l])
        if (!ch.same_shape(levels_[l].front()))
          throw InvalidInput("channels within a pyramid level differ in shape");
      if (l > 0) {
        const auto& fine = levels_[l - 1].front();
        const auto& coarse = levels_[l].front();
        if (coarse.width() != fine.width() / 2 || coarse.height() != fine.height() / 2)
          throw InvalidInput("pyramid level does not halve the previous level");
      }
    }
  }

  std::size_t level_count() const { return levels_.size(); }
  const MultiField& level(std::size_t l) const { return levels_.at(l); }
  std::size_t channels(std::size_t l) const { return levels_.at(l).size(); }

 private:
  std::vector<MultiField> levels_;
};

/// Per-pixel categorical distribution over P part classes (channel 0 is background).
class SemanticMap {
 public:
  explicit SemanticMap(MultiField probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw InvalidInput("semantic map needs at least one channel");
    const auto& first = probs_.front();
    for (const auto& ch : probs_)
      if (!ch.same_shape(first)) throw InvalidInput("semantic map channels differ in shape");
    for (std::size_t i = 0; i < first.size(); ++i) {
      double sum = 0.0;
      for (const auto& ch : probs_) {
        const double p = ch.values()[i];
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("semantic probability outside [0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-5) throw InvalidInput("semantic probabilities do not sum to 1");
    }
  }

  /// One-hot map from a label grid with labels in [0, classes).
  static SemanticMap one_hot(const LabelGrid& labels, int classes) {
    MultiField probs(static_cast<std::size_t>(classes), ScalarField(labels.width(), labels.height()));
    for (int v = 0; v < labels.height(); ++v)
      for (int u = 0; u < labels.width(); ++u) {
        const int c = labels(u, v);
        if (c < 0 || c >= classes) throw InvalidInput("label out of range for one-hot map");
        probs[static_cast<std::size_t>(c)](u, v) = 1.0;
      }
    return SemanticMap(std::move(probs));
  }

  int classes() const { return static_cast<int>(probs_.size()); }
  int width() const { return probs_.front().width(); }
  int height() const { return probs_.front().height(); }
  const ScalarField& channel(int c) const { return probs_.at(static_cast<std::size_t>(c)); }
  const MultiField& channels() const { return probs_; }

 private:
  MultiField probs_;
};

/// Bilinear interpolation with zero padding. Weights are (1-|u-u'|)(1-|v-v'|)
/// over the four integer neighbours; out-of-lattice neighbours read as zero.
template <typename T>
T bilinear_sample(const Field<T>& field, GridPoint at) {
  if (!std::isfinite(at.u) || !std::isfinite(at.v))
    throw InvalidInput("bilinear_sample: non-finite coordinate");
  if (field.empty()) throw InvalidInput("bilinear_sample: empty field");
  const double fu = std::floor(at.u);
  const double fv = std::floor(at.v);
  const double au = at.u - fu;
  const double av = at.v - fv;
  // Coordinates far outside the lattice: every neighbour is padding.
  if (fu < -2.0 || fv < -2.0 || fu > field.width() + 1.0 || fv > field.height() + 1.0) return T{};
  const int u0 = static_cast<int>(fu);
  const int v0 = static_cast<int>(fv);
  T out = field.at_or_zero(u0, v0) * ((1.0 - au) * (1.0 - av));
  out += field.at_or_zero(u0 + 1, v0) * (au * (1.0 - av));
  out += field.at_or_zero(u0, v0 + 1) * ((1.0 - au) * av);
  out += field.at_or_zero(u0 + 1, v0 + 1) * (au * av);
  return out;
}

namespace detail {

// Half-pixel source coordinate with edge clamping, as in align_corners=false
// resampling: src = max(0, (dst + 0.5) / factor - 0.5), upper neighbour clamped.
struct ResampleTap {
  int lo = 0;
  int hi = 0;
  double w_hi = 0.0;
};

inline std::vector<ResampleTap> resample_taps(int src_len, int factor) {
  std::vector<ResampleTap> taps(static_cast<std::size_t>(src_len) * static_cast<std::size_t>(factor));
  for (std::size_t d = 0; d < taps.size(); ++d) {
    double s = (static_cast<double>(d) + 0.5) / factor - 0.5;
    s = std::max(s, 0.0);
    const int lo = std::min(static_cast<int>(std::floor(s)), src_len - 1);
    const int hi = std::min(lo + 1, src_len - 1);
    taps[d] = {lo, hi, s - lo};
  }
  return taps;
}

}  // namespace detail

/// Bilinear upsampling by an integer factor, half-pixel convention with edge
/// clamping (constant fields stay constant, borders replicate).
template <typename T>
Field<T> upsample_bilinear(const Field<T>& field, int factor) {
  if (factor < 1) throw InvalidInput("upsample_bilinear: factor must be >= 1");
  if (factor == 1) return field;
  Field<T> out(field.width() * factor, field.height() * factor);
  if (field.empty()) return out;
  const auto tu = detail::resample_taps(field.width(), factor);
  const auto tv = detail::resample_taps(field.height(), factor);
  for (int v = 0; v < out.height(); ++v) {
    const auto& rv = tv[static_cast<std::size_t>(v)];
    for (int u = 0; u < out.width(); ++u) {
      const auto& ru = tu[static_cast<std::size_t>(u)];
      const T top = field(ru.lo, rv.lo) * (1.0 - ru.w_hi) + field(ru.hi, rv.lo) * ru.w_hi;
      const T bot = field(ru.lo, rv.hi) * (1.0 - ru.w_hi) + field(ru.hi, rv.hi) * ru.w_hi;
      out(u, v) = top * (1.0 - rv.w_hi) + bot * rv.w_hi;
    }
  }
  return out;
}

/// Transpose of upsample_bilinear: scatters a gradient on the upsampled
/// lattice back onto the source lattice.
template <typename T>
Field<T> upsample_bilinear_transpose(const Field<T>& grad_up, int src_width, int src_height, int factor) {
  if (factor < 1) throw InvalidInput("upsample_bilinear_transpose: factor must be >= 1");
  if (grad_up.width() != src_width * factor || grad_up.height() != src_height * factor)
    throw InvalidInput("upsample_bilinear_transpose: shape mismatch");
  if (factor == 1) return grad_up;
  Field<T> out(src_width, src_height);
  if (out.empty()) return out;
  const auto tu = detail::resample_taps(src_width, factor);
  const auto tv = detail::resample_taps(src_height, factor);
  for (int v = 0; v < grad_up.height(); ++v) {
    const auto& rv = tv[static_cast<std::size_t>(v)];
    for (int u = 0; u < grad_up.width(); ++u) {
      const auto& ru = tu[static_cast<std::size_t>(u)];
      const T g = grad_up(u, v);
      out(ru.lo, rv.lo) += g * ((1.0 - ru.w_hi) * (1.0 - rv.w_hi));
      out(ru.hi, rv.lo) += g * (ru.w_hi * (1.0 - rv.w_hi));
      out(ru.lo, rv.hi) += g * ((1.0 - ru.w_hi) * rv.w_hi);
      out(ru.hi, rv.hi) += g * (ru.w_hi * rv.w_hi);
    }
  }
  return out;
}

/// Per-pixel argmax over channels; ties go to the lowest channel index.
inline LabelGrid argmax_labels(const SemanticMap& s) {
  LabelGrid labels(s.width(), s.height());
  const auto& ch = s.channels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int best = 0;
    double best_p = ch[0].values()[i];
    for (std::size_t c = 1; c < ch.size(); ++c) {
      const double p = ch[c].values()[i];
      if (p > best_p) {
        best_p = p;
        best = static_cast<int>(c);
      }
    }
    labels.values()[i] = best;
  }
  return labels;
}

}  // namespace partgraph
