#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "udad/error.hpp"

namespace udad::nn {

using shape_t = std::vector<std::size_t>;

inline std::size_t shape_size(const shape_t& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const shape_t& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major array. Volumes use (N, C, W, H, D).
template <class T>
class basic_tensor {
 public:
  using value_type = T;

  basic_tensor() = default;
  explicit basic_tensor(shape_t shape, T fill = T{}) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}
  basic_tensor(shape_t shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_))
      throw shape_error("tensor: " + std::to_string(values_.size()) + " values for shape " + shape_string(shape_));
  }

  const shape_t& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <class U>
  basic_tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return basic_tensor<U>(shape_, std::move(out));
  }

 private:
  shape_t shape_;
  std::vector<T> values_;
};

using tensor = basic_tensor<float>;

/// Spatial voxel count of a (N, C, W, H, D) shape.
inline std::size_t spatial_size(const shape_t& s) { return s.at(2) * s.at(3) * s.at(4); }

}  // namespace udad::nn
