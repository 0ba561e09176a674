#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "flatsurr/core/error.hpp"

namespace flatsurr {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 64-bit accumulator for reductions over `Scalar`.
template <typename Scalar>
using Accum = std::conditional_t<(sizeof(Scalar) < sizeof(double)), double, Scalar>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major n-d array. Storage is an Eigen column vector so that
/// whole-tensor arithmetic is plain Eigen expression code.
template <typename Scalar>
class Tensor {
 public:
  using Vector = VectorX<Scalar>;
  using MatrixMap = Eigen::Map<MatrixRM<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const MatrixRM<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Vector::Zero(shape_numel(shape_));
  }

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
    Vector v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  Vector& vec() noexcept { return data_; }
  const Vector& vec() const noexcept { return data_; }
  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// View as a (dim0, rest) matrix.
  MatrixMap matrix() { return MatrixMap(data_.data(), shape_.at(0), size() / shape_.at(0)); }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(data_.data(), shape_.at(0), size() / shape_.at(0));
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

  /// Rows [begin, end) along the leading dimension.
  Tensor rows(Index begin, Index end) const {
    Shape s = shape_;
    s.at(0) = end - begin;
    const Index stride = size() / shape_.at(0);
    return Tensor(std::move(s), data_.segment(begin * stride, (end - begin) * stride));
  }

  /// Gather rows along the leading dimension.
  Tensor gather(const std::vector<Index>& idx) const {
    Shape s = shape_;
    s.at(0) = static_cast<Index>(idx.size());
    const Index stride = size() / shape_.at(0);
    Tensor out(std::move(s));
    for (std::size_t i = 0; i < idx.size(); ++i)
      out.data_.segment(static_cast<Index>(i) * stride, stride) = data_.segment(idx[i] * stride, stride);
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  void check_shape() const {
    for (Index d : shape_)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  Vector data_;
};

}  // namespace flatsurr
