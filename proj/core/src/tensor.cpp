#include "shakelab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "shakelab/errors.hpp"

namespace shakelab {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void check_extents(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) {
      throw ConfigError("tensor extents must be positive, got " +
                        shape_string(shape));
    }
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  check_extents(shape_);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw ConfigError("tensor of shape " + shape_string(shape_) + " needs " +
                      std::to_string(shape_size(shape_)) + " values, got " +
                      std::to_string(values_.size()));
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), values_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(values_));
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  for (T v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ConfigError("cannot add " + shape_string(other.shape_) + " into " +
                      shape_string(shape_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace shakelab
