#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "pfad/error.hpp"

namespace pfad {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using RowMajorMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                "tensors hold f32 or f64 only");
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }
inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& dims);

/// Dense row-major n-dimensional array. The last extent varies fastest, so a
/// C x H x W map viewed as matrix() has one row per channel and one column
/// per spatial position.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using MatrixView = Eigen::Map<RowMajorMat<Scalar>>;
  using ConstMatrixView = Eigen::Map<const RowMajorMat<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape dims) : dims_(std::move(dims)) {
    validate_shape(dims_);
    data_ = Vec<Scalar>::Zero(static_cast<Eigen::Index>(shape_product(dims_)));
  }

  Tensor(Shape dims, Vec<Scalar> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_shape(dims_);
    if (static_cast<std::size_t>(data_.size()) != shape_product(dims_))
      throw DataError("tensor payload length " + std::to_string(data_.size()) +
                      " does not match dims " + shape_string(dims_));
  }

  static Tensor constant(Shape dims, Scalar value) {
    Tensor t(std::move(dims));
    t.data_.setConstant(value);
    return t;
  }

  static void validate_shape(const Shape& dims) {
    if (dims.empty()) throw DataError("tensor must have at least one dimension");
    for (auto e : dims)
      if (e == 0) throw DataError("tensor extents must be >= 1, got " + shape_string(dims));
  }

  const Shape& dims() const { return dims_; }
  std::size_t ndim() const { return dims_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  std::size_t extent(std::size_t i) const { return dims_.at(i); }
  bool empty() const { return dims_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vec<Scalar>& values() { return data_; }
  const Vec<Scalar>& values() const { return data_; }

  /// Rows = dims[0], columns = product of remaining extents.
  MatrixView matrix() {
    auto rows = static_cast<Eigen::Index>(dims_.at(0));
    return MatrixView(data_.data(), rows, static_cast<Eigen::Index>(size()) / rows);
  }
  ConstMatrixView matrix() const {
    auto rows = static_cast<Eigen::Index>(dims_.at(0));
    return ConstMatrixView(data_.data(), rows, static_cast<Eigen::Index>(size()) / rows);
  }

  Scalar& operator()(std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator()(std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar& operator()(std::size_t r, std::size_t c) { return data_[index2(r, c)]; }
  Scalar operator()(std::size_t r, std::size_t c) const { return data_[index2(r, c)]; }
  Scalar& operator()(std::size_t c, std::size_t h, std::size_t w) { return data_[index3(c, h, w)]; }
  Scalar operator()(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index3(c, h, w)];
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(dims_, data_.template cast<Other>());
  }

  Tensor reshaped(Shape dims) const {
    if (shape_product(dims) != size())
      throw DataError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
    return Tensor(std::move(dims), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Eigen::Index index2(std::size_t r, std::size_t c) const {
    return static_cast<Eigen::Index>(r * dims_[1] + c);
  }
  Eigen::Index index3(std::size_t c, std::size_t h, std::size_t w) const {
    return static_cast<Eigen::Index>((c * dims_[1] + h) * dims_[2] + w);
  }

  Shape dims_;
  Vec<Scalar> data_;
};

/// A tensor whose scalar type is only known at run time (read from disk).
using TensorF = std::variant<Tensor<float>, Tensor<double>>;

inline DType dtype_of(const TensorF& t) { return t.index() == 0 ? DType::f32 : DType::f64; }

inline const Shape& dims_of(const TensorF& t) {
  return std::visit([](const auto& x) -> const Shape& { return x.dims(); }, t);
}

template <typename Scalar>
Tensor<Scalar> as(const TensorF& t) {
  return std::visit([](const auto& x) { return x.template cast<Scalar>(); }, t);
}

}  // namespace pfad
