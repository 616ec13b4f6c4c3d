#ifndef CCMT_TENSOR_HPP_
#define CCMT_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ccmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major n-d array. `T` is float for training and double for
/// finite-difference gradient checks.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  /// Multi-index access; throws ShapeError on rank mismatch or overflow.
  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  /// Same values, new shape of equal size.
  BasicTensor reshaped(Shape shape) const&;
  BasicTensor reshaped(Shape shape) &&;

  void fill(T v);
  bool all_finite() const noexcept;

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> values_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace ccmt

#endif  // CCMT_TENSOR_HPP_
