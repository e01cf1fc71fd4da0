#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxreg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major-per-channel tensor. Feature maps use (C,X,Y,Z) with x
/// fastest inside a channel: flat = c*XYZ + x + X*(y + Y*z). This matches the
/// on-disk volume order, so a channel slab aliases a Volume payload directly.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <class T>
Tensor<T> random_uniform(Shape s, T lo, T hi, std::mt19937& rng) {
  Tensor<T> t(std::move(s));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> random_normal(Shape s, T mean, T stddev, std::mt19937& rng) {
  Tensor<T> t(std::move(s));
  std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

// flat index helpers for (C,X,Y,Z) maps, x fastest
inline int64_t vidx(int64_t x, int64_t y, int64_t z, int64_t X, int64_t Y) {
  return x + X * (y + Y * z);
}
inline int64_t cidx(int64_t c, int64_t x, int64_t y, int64_t z, int64_t X, int64_t Y, int64_t Z) {
  return c * X * Y * Z + vidx(x, y, z, X, Y);
}

}  // namespace voxreg
