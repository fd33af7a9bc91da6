#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "clinembed/error.hpp"
#include "clinembed/rng.hpp"

namespace clinembed {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

// Dense row-major tensor. The data length always equals the shape product.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;

  Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
    check_shape();
    data.assign(shape_numel(shape), fill);
  }

  Tensor(std::vector<int> s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (data.size() != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), T(0)); }

  static Tensor full(std::vector<int> s, T value) {
    return Tensor(std::move(s), value);
  }

  static Tensor randn(std::vector<int> s, Rng& rng, T stddev) {
    Tensor t(std::move(s), T(0));
    for (auto& v : t.data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  size_t numel() const { return data.size(); }

  int dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) {
      throw UsageError("axis " + std::to_string(axis) + " out of range for " +
                       shape_str(shape));
    }
    return shape[static_cast<size_t>(axis)];
  }

 private:
  void check_shape() const {
    for (int d : shape) {
      if (d <= 0) {
        throw ShapeError("tensor shape must be positive, got " +
                         shape_str(shape));
      }
    }
  }
};

template <typename T>
bool all_finite(const std::vector<T>& values) {
  for (T v : values) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace clinembed
