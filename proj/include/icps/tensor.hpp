#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "icps/errors.hpp"

namespace icps {

using Index = Eigen::Index;

/// (N, C, H, W) extents of a feature map.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  Index numel() const { return n * c * h * w; }
  Index per_sample() const { return c * h * w; }
  Index plane() const { return h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
           std::to_string(w) + ")";
  }
};

/// Dense rank-4 tensor in NCHW order backed by an Eigen vector.
///
/// Sample `n` is exposed as a row-major (C x H*W) matrix map so that 1x1
/// convolutions and im2col products are plain Eigen GEMMs.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  using FlatMap = Eigen::Map<Vector>;
  using ConstFlatMap = Eigen::Map<const Vector>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(Vector::Zero(shape.numel())) {
    require(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0,
            "tensor extents must be non-negative: " + shape.str());
  }
  Tensor(Index n, Index c, Index h, Index w) : Tensor(Shape{n, c, h, w}) {}

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(shape);
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index c() const { return shape_.c; }
  Index h() const { return shape_.h; }
  Index w() const { return shape_.w; }
  Index size() const { return shape_.numel(); }
  bool empty() const { return shape_.numel() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Scalar& operator()(Index n, Index c, Index y, Index x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  Scalar operator()(Index n, Index c, Index y, Index x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  /// Sample `n` as a (C x H*W) row-major matrix.
  MatrixMap sample(Index n) {
    return MatrixMap(data() + n * shape_.per_sample(), shape_.c, shape_.plane());
  }
  ConstMatrixMap sample(Index n) const {
    return ConstMatrixMap(data() + n * shape_.per_sample(), shape_.c, shape_.plane());
  }

  /// Sample `n` flattened to a C*H*W vector.
  FlatMap flat_sample(Index n) { return FlatMap(data() + n * shape_.per_sample(), shape_.per_sample()); }
  ConstFlatMap flat_sample(Index n) const {
    return ConstFlatMap(data() + n * shape_.per_sample(), shape_.per_sample());
  }

  void set_zero() { data_.setZero(); }
  void fill(Scalar v) { data_.setConstant(v); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.vec() = data_.template cast<Other>();
    return out;
  }

  Tensor& operator+=(const Tensor& other) {
    require(shape_ == other.shape_, "tensor add shape mismatch " + shape_.str() + " vs " + other.shape_.str());
    data_ += other.data_;
    return *this;
  }

 private:
  Shape shape_{};
  Vector data_;
};

template <typename Scalar>
inline Tensor<Scalar> operator*(Scalar alpha, const Tensor<Scalar>& t) {
  Tensor<Scalar> out(t.shape());
  out.vec() = alpha * t.vec();
  return out;
}

/// Largest absolute elementwise difference; shapes must match.
template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.shape() == b.shape(), "max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  if (a.empty()) return Scalar(0);
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

/// Channel concatenation of two maps with matching N/H/W.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
          "concat_channels shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<Scalar> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (Index n = 0; n < a.n(); ++n) {
    out.sample(n).topRows(a.c()) = a.sample(n);
    out.sample(n).bottomRows(b.c()) = b.sample(n);
  }
  return out;
}

/// Inverse of concat_channels: first `first_channels` go to `a`, the rest to `b`.
template <typename Scalar>
void split_channels(const Tensor<Scalar>& x, Index first_channels, Tensor<Scalar>& a, Tensor<Scalar>& b) {
  require(first_channels > 0 && first_channels < x.c(), "split_channels: bad split point");
  a = Tensor<Scalar>(x.n(), first_channels, x.h(), x.w());
  b = Tensor<Scalar>(x.n(), x.c() - first_channels, x.h(), x.w());
  for (Index n = 0; n < x.n(); ++n) {
    a.sample(n) = x.sample(n).topRows(first_channels);
    b.sample(n) = x.sample(n).bottomRows(x.c() - first_channels);
  }
}

}  // namespace icps
