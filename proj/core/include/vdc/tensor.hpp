#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vdc/dual.hpp"
#include "vdc/error.hpp"

namespace vdc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

// Dense row-major tensor. Video frames are [T, C, H, W]; network activations
// are [B, C, T, H, W] (channels first, as the convolution kernels expect).
template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) {}
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) {
      throw DomainError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                        shape_string(shape));
    }
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  S* ptr() noexcept { return data.data(); }
  const S* ptr() const noexcept { return data.data(); }
  std::span<S> span() noexcept { return data; }
  std::span<const S> span() const noexcept { return data; }
  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  void fill(const S& value) { std::fill(data.begin(), data.end(), value); }
};

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = To(value_of(t.data[i]));
  return out;
}

template <class T>
Tensor<Dual<T>> make_dual(const Tensor<T>& value, const Tensor<T>* tangent) {
  Tensor<Dual<T>> out(value.shape);
  for (std::size_t i = 0; i < value.size(); ++i) {
    out.data[i] = Dual<T>(value.data[i], tangent ? tangent->data[i] : T(0));
  }
  return out;
}

template <class T>
void split_dual(const Tensor<Dual<T>>& t, Tensor<T>& value, Tensor<T>& tangent) {
  value = Tensor<T>(t.shape);
  tangent = Tensor<T>(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    value.data[i] = t.data[i].v;
    tangent.data[i] = t.data[i].d;
  }
}

template <class T>
std::vector<Dual<T>> make_dual(std::span<const T> value, std::span<const T> tangent) {
  std::vector<Dual<T>> out(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) {
    out[i] = Dual<T>(value[i], tangent.empty() ? T(0) : tangent[i]);
  }
  return out;
}

template <class T>
void split_dual(std::span<const Dual<T>> x, std::vector<T>& value, std::vector<T>& tangent) {
  value.resize(x.size());
  tangent.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    value[i] = x[i].v;
    tangent[i] = x[i].d;
  }
}

}  // namespace vdc
