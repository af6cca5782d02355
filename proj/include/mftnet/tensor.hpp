#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mftnet {

using Shape = std::vector<std::size_t>;

// Raised for any shape contract violation; the message names the operation
// and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
Shape row_major_strides(const Shape& shape);

// Dense row-major array. A default-constructed tensor is "null": it has no
// shape and no storage. Every other tensor has strictly positive extents and
// exactly shape_numel(shape) values.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value) { return Tensor(Shape{1}, value); }

  bool is_null() const noexcept { return shape_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  Real& at(std::initializer_list<std::size_t> index);
  Real at(std::initializer_list<std::size_t> index) const;

  // Same values under a new shape with identical element count.
  Tensor reshaped(Shape shape) const;
  void fill(Real value);
  bool all_finite() const noexcept;

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<Real> data_;
};

// Bitwise equality of shape and contents.
template <typename Real>
bool identical(const Tensor<Real>& a, const Tensor<Real>& b);

// max_i |a_i - b_i|; shapes must match.
template <typename Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mftnet
