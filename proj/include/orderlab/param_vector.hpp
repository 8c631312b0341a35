#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "orderlab/common.hpp"

namespace orderlab {

// One named tensor in the flat parameter layout.
struct LayerSpec {
  std::string id;
  std::vector<uint32_t> shape;

  size_t size() const {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
  }
  bool operator==(const LayerSpec& o) const { return id == o.id && shape == o.shape; }
};

// Flat per-layer collection of model parameters: the common coordinate system
// for checkpoints, estimated trajectories, gradients and update terms.
// Storage is one contiguous array; layers are views into it.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::vector<LayerSpec> layout) : layout_(std::move(layout)) {
    offsets_.clear();
    offsets_.reserve(layout_.size() + 1);
    size_t off = 0;
    for (const auto& l : layout_) {
      offsets_.push_back(off);
      off += l.size();
    }
    offsets_.push_back(off);
    data_.assign(off, 0.0);
    layout_digest_ = compute_layout_digest(layout_);
  }

  const std::vector<LayerSpec>& layout() const { return layout_; }
  size_t total_dim() const { return data_.size(); }
  size_t layer_count() const { return layout_.size(); }
  uint64_t layout_digest() const { return layout_digest_; }

  std::span<double> layer(size_t i) {
    return {data_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const double> layer(size_t i) const {
    return {data_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  size_t layer_offset(size_t i) const { return offsets_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  bool conformable_with(const ParamVector& o) const {
    return layout_digest_ == o.layout_digest_ && total_dim() == o.total_dim();
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static uint64_t compute_layout_digest(const std::vector<LayerSpec>& layout) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : layout) {
      h = fnv1a64(l.id, h);
      for (uint32_t d : l.shape) h = fnv1a64(&d, sizeof(d), h);
    }
    return h;
  }

 private:
  std::vector<LayerSpec> layout_;
  std::vector<size_t> offsets_{0};
  std::vector<double> data_;
  uint64_t layout_digest_ = 0;
};

namespace detail {
inline void require_conformable(const ParamVector& a, const ParamVector& b, const char* op) {
  if (!a.conformable_with(b))
    throw ShapeError(std::string(op) + ": operands are not conformable (layer layouts differ)");
}
inline void require_no_nan(const ParamVector& v, const char* op) {
  for (double x : v.data())
    if (std::isnan(x)) throw InputError(std::string(op) + ": NaN in input");
}
}  // namespace detail

// --- elementwise operations -------------------------------------------------

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
  detail::require_conformable(a, b, "add");
  detail::require_no_nan(a, "add");
  detail::require_no_nan(b, "add");
  ParamVector r = a;
  for (size_t i = 0; i < r.total_dim(); ++i) r.data()[i] += b.data()[i];
  return r;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
  detail::require_conformable(a, b, "sub");
  detail::require_no_nan(a, "sub");
  detail::require_no_nan(b, "sub");
  ParamVector r = a;
  for (size_t i = 0; i < r.total_dim(); ++i) r.data()[i] -= b.data()[i];
  return r;
}

inline ParamVector mul(const ParamVector& a, const ParamVector& b) {
  detail::require_conformable(a, b, "mul");
  detail::require_no_nan(a, "mul");
  detail::require_no_nan(b, "mul");
  ParamVector r = a;
  for (size_t i = 0; i < r.total_dim(); ++i) r.data()[i] *= b.data()[i];
  return r;
}

inline ParamVector mul(const ParamVector& a, double s) {
  detail::require_no_nan(a, "mul");
  ParamVector r = a;
  for (double& v : r.data()) v *= s;
  return r;
}

inline double guarded_div(double num, double den, double guard) {
  if (std::abs(den) < guard) den = std::signbit(den) ? -guard : guard;
  return num / den;
}

// Elementwise division where any denominator smaller than the guard in
// magnitude is replaced by sign(den) * guard; sign of 0 counts as +.
inline ParamVector div_guarded(const ParamVector& a, const ParamVector& b, double eps_div) {
  detail::require_conformable(a, b, "div_guarded");
  detail::require_no_nan(a, "div_guarded");
  detail::require_no_nan(b, "div_guarded");
  if (!(eps_div > 0)) throw InputError("div_guarded: guard must be positive");
  ParamVector r = a;
  for (size_t i = 0; i < r.total_dim(); ++i)
    r.data()[i] = guarded_div(a.data()[i], b.data()[i], eps_div);
  return r;
}

// Per-coordinate guards (used by the update-term difference quotients, where
// the guard scales with the checkpoint magnitude).
inline ParamVector div_guarded(const ParamVector& a, const ParamVector& b,
                               const ParamVector& guards) {
  detail::require_conformable(a, b, "div_guarded");
  detail::require_conformable(a, guards, "div_guarded");
  detail::require_no_nan(a, "div_guarded");
  detail::require_no_nan(b, "div_guarded");
  ParamVector r = a;
  for (size_t i = 0; i < r.total_dim(); ++i)
    r.data()[i] = guarded_div(a.data()[i], b.data()[i], guards.data()[i]);
  return r;
}

inline ParamVector clip(const ParamVector& a, double bound) {
  detail::require_no_nan(a, "clip");
  if (!(bound > 0)) throw InputError("clip: bound must be positive");
  ParamVector r = a;
  for (double& v : r.data()) v = v < -bound ? -bound : (v > bound ? bound : v);
  return r;
}

inline double max_abs(const ParamVector& a) {
  double m = 0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_rel_err(const ParamVector& a, const ParamVector& b, double floor = 1e-12) {
  detail::require_conformable(a, b, "max_rel_err");
  double m = 0;
  for (size_t i = 0; i < a.total_dim(); ++i) {
    double denom = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), floor});
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return m;
}

}  // namespace orderlab
