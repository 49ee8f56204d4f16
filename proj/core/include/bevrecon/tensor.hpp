#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bevrecon {

inline int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= d;
  }
  return n;
}

/// Dense row-major tensor of rank <= 4. The workhorse value type for BEV
/// features (H x W x C) and sampler state.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shp)
      : shape(std::move(shp)),
        data(static_cast<size_t>(numel_of(shape)), S(0)) {
    if (shape.size() > 4) throw std::invalid_argument("tensor rank > 4");
  }

  static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }

  static Tensor full(std::vector<int> shp, S value) {
    Tensor t(std::move(shp));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  /// Rank-3 accessor, (row, col, channel).
  S& at(int h, int w, int c) {
    return data[(static_cast<size_t>(h) * shape[1] + w) * shape[2] + c];
  }
  const S& at(int h, int w, int c) const {
    return data[(static_cast<size_t>(h) * shape[1] + w) * shape[2] + c];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (const S& v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_string(a.shape) + " vs " + shape_string(b.shape));
  }
}

}  // namespace bevrecon
