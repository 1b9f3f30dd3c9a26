#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "maf/errors.hpp"

namespace maf {

using Index = std::int64_t;

/// Batch-channel-height-width extent of a 4-D tensor.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  constexpr Index numel() const noexcept { return n * c * h * w; }
  constexpr Index plane() const noexcept { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense NCHW tensor, contiguous and row-major in n→c→h→w order.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Array::Zero(checked(shape))) {}
  Tensor(const Shape& shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != checked(shape)) {
      throw ShapeError("Tensor", "data length", shape.numel(), data_.size());
    }
  }

  static Tensor zeros(const Shape& s) { return Tensor(s); }
  static Tensor constant(const Shape& s, Scalar v) {
    return Tensor(s, Array::Constant(checked(s), v));
  }
  static Tensor ones(const Shape& s) { return constant(s, Scalar(1)); }
  /// Per-channel vector stored as (c,1,1,1).
  static Tensor vector(Index c, Scalar v = Scalar(0)) { return constant({c, 1, 1, 1}, v); }

  template <typename Rng>
  static Tensor normal(const Shape& s, Rng& rng, double stddev = 1.0, double mean = 0.0) {
    std::normal_distribution<double> dist(mean, stddev);
    Tensor t(s);
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = static_cast<Scalar>(dist(rng));
    return t;
  }
  template <typename Rng>
  static Tensor uniform(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(s);
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = static_cast<Scalar>(dist(rng));
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index numel() const noexcept { return shape_.numel(); }
  bool empty() const noexcept { return data_.size() == 0; }

  Array& data() noexcept { return data_; }
  const Array& data() const noexcept { return data_; }
  Scalar* ptr() noexcept { return data_.data(); }
  const Scalar* ptr() const noexcept { return data_.data(); }

  Index offset(Index n, Index c, Index h, Index w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  Scalar& operator()(Index n, Index c, Index h, Index w) noexcept {
    return data_[offset(n, c, h, w)];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const noexcept {
    return data_[offset(n, c, h, w)];
  }
  Scalar& operator[](Index i) noexcept { return data_[i]; }
  Scalar operator[](Index i) const noexcept { return data_[i]; }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  static Index checked(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("Tensor", "negative extent in shape " + s.str());
    }
    return s.numel();
  }

  Shape shape_{};
  Array data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Largest absolute element-wise difference; shapes must match.
template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff", "shape " + a.shape().str() + " vs " + b.shape().str());
  }
  if (a.empty()) return 0.0;
  return static_cast<double>((a.data() - b.data()).abs().maxCoeff());
}

/// Global NaN/Inf checking switch. Initialized from MAF_CHECKED (default on).
bool checked_mode() noexcept;
void set_checked_mode(bool on) noexcept;

/// Throws NumericError naming `op` when checked mode is on and `t` holds NaN/Inf.
template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, const char* op) {
  if (checked_mode() && !t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output " + t.shape().str());
  }
}

}  // namespace maf
