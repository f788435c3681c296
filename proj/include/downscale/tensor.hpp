#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "downscale/errors.hpp"

namespace dsc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// Dense row-major n-dimensional array. Value semantics, no views.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != shape_numel(shape))
      throw input_error("tensor data size does not match shape");
  }

  std::size_t numel() const { return v.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }
  std::size_t rank() const { return shape.size(); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  T& operator[](std::size_t i) { return v[i]; }
  const T& operator[](std::size_t i) const { return v[i]; }

  T& at2(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const {
    return v[i * shape[1] + j];
  }
  T& at3(std::size_t i, std::size_t j, std::size_t k) {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  T& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at4(std::size_t i, std::size_t j, std::size_t k,
               std::size_t l) const {
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.v == b.v;
  }
};

}  // namespace dsc
