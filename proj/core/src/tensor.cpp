#include "ccmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccmt/error.hpp"

namespace ccmt {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (shape_size(shape_) != values_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

template <class T>
std::size_t BasicTensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " vs tensor " +
                     shape_string(shape_));
  }
  std::size_t off = 0, axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range for " + shape_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <class T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) {
  return values_[offset(index)];
}

template <class T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  return values_[offset(index)];
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  return BasicTensor(*this).reshaped(std::move(shape));
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  if (shape_size(shape) != values_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return BasicTensor(std::move(shape), std::move(values_));
}

template <class T>
void BasicTensor<T>::fill(T v) {
  std::fill(values_.begin(), values_.end(), v);
}

template <class T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace ccmt
