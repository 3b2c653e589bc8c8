#pragma once

#include <Eigen/Core>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "dgcnn/error.hpp"
#include "dgcnn/rng.hpp"

namespace dgcnn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor.  Rank is dynamic but stays small (<= 3 in this
/// project); matrix views are Eigen maps over the flat storage.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  template <typename T>
  using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Matrix = MatrixT<S>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)), data_(Eigen::VectorX<S>::Zero(shape_numel(shape_))), requires_grad_(requires_grad) {
    check_shape();
  }

  Tensor(Shape shape, Eigen::VectorX<S> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    check_shape();
    if (shape_numel(shape_) != data_.size())
      throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                           " values");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

  static Tensor from_vector(std::initializer_list<S> values) {
    Tensor t({static_cast<Index>(values.size())});
    Index i = 0;
    for (S v : values) t.data_[i++] = v;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<S>> rows) {
    Index r = static_cast<Index>(rows.size());
    Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw DimensionError("tensor: ragged row list");
      for (S v : row) t.data_[i++] = v;
    }
    return t;
  }

  static Tensor scalar(S value) { return full({Index(1)}, value); }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  /// Uniform in [-bound, bound]; used for Glorot-style init.
  static Tensor random_uniform(Shape shape, S bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = static_cast<S>(rng.uniform(-double(bound), double(bound)));
    return t;
  }

  static Tensor random_normal(Shape shape, S mean, S stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t.data_[i] = static_cast<S>(rng.normal(double(mean), double(stddev)));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index extent(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index numel() const { return data_.size(); }

  Eigen::VectorX<S>& vec() { return data_; }
  const Eigen::VectorX<S>& vec() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  /// Rank-2 view (rank-1 tensors map to a single row).
  MatrixMap matrix() {
    auto [r, c] = matrix_extents();
    return MatrixMap(data_.data(), r, c);
  }
  ConstMatrixMap matrix() const {
    auto [r, c] = matrix_extents();
    return ConstMatrixMap(data_.data(), r, c);
  }

  bool all_finite() const { return data_.allFinite(); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t;
    t = Tensor<T>(shape_, data_.template cast<T>(), requires_grad_);
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::pair<Index, Index> matrix_extents() const {
    if (rank() == 1) return {Index(1), shape_[0]};
    if (rank() == 2) return {shape_[0], shape_[1]};
    throw DimensionError("matrix view requires rank 1 or 2, got " + shape_str(shape_));
  }

  void check_shape() const {
    for (Index e : shape_)
      if (e < 0) throw DimensionError("tensor: negative extent in " + shape_str(shape_));
  }

  Shape shape_;
  Eigen::VectorX<S> data_;
  bool requires_grad_ = false;
};

using Tensor64 = Tensor<double>;
using Tensor32 = Tensor<float>;

}  // namespace dgcnn
