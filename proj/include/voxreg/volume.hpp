#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "voxreg/tensor.hpp"

namespace voxreg {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dims3 {
  int64_t nx = 0, ny = 0, nz = 0;
  int64_t numel() const { return nx * ny * nz; }
  bool operator==(const Dims3&) const = default;
};

/// Scalar 3D image, x fastest: flat = x + nx*(y + ny*z).
struct Volume {
  Dims3 dims;
  std::vector<float> data;

  Volume() = default;
  explicit Volume(Dims3 d) : dims(d), data(static_cast<size_t>(d.numel()), 0.f) {}

  float& at(int64_t x, int64_t y, int64_t z) {
    return data[static_cast<size_t>(x + dims.nx * (y + dims.ny * z))];
  }
  float at(int64_t x, int64_t y, int64_t z) const {
    return data[static_cast<size_t>(x + dims.nx * (y + dims.ny * z))];
  }

  Tensor<float> to_tensor() const { return Tensor<float>({1, dims.nx, dims.ny, dims.nz}, data); }
  static Volume from_tensor(const Tensor<float>& t) {
    Volume v({t.dim(1), t.dim(2), t.dim(3)});
    v.data = t.data;
    return v;
  }
};

struct LabelVolume {
  Dims3 dims;
  std::vector<uint16_t> data;

  LabelVolume() = default;
  explicit LabelVolume(Dims3 d) : dims(d), data(static_cast<size_t>(d.numel()), 0) {}

  uint16_t& at(int64_t x, int64_t y, int64_t z) {
    return data[static_cast<size_t>(x + dims.nx * (y + dims.ny * z))];
  }
  uint16_t at(int64_t x, int64_t y, int64_t z) const {
    return data[static_cast<size_t>(x + dims.nx * (y + dims.ny * z))];
  }
};

/// Per-voxel displacement u (voxel units), stored as three contiguous
/// component blocks (ux, uy, uz), each in volume order.
struct DisplacementField {
  Dims3 dims;
  std::vector<float> data;  // 3 * nx*ny*nz

  DisplacementField() = default;
  explicit DisplacementField(Dims3 d) : dims(d), data(static_cast<size_t>(3 * d.numel()), 0.f) {}

  float& u(int c, int64_t x, int64_t y, int64_t z) {
    return data[static_cast<size_t>(c * dims.numel() + x + dims.nx * (y + dims.ny * z))];
  }
  float u(int c, int64_t x, int64_t y, int64_t z) const {
    return data[static_cast<size_t>(c * dims.numel() + x + dims.nx * (y + dims.ny * z))];
  }

  Tensor<float> to_tensor() const { return Tensor<float>({3, dims.nx, dims.ny, dims.nz}, data); }
  static DisplacementField from_tensor(const Tensor<float>& t) {
    DisplacementField f({t.dim(1), t.dim(2), t.dim(3)});
    f.data = t.data;
    return f;
  }
};

inline void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
  if (!(a == b))
    throw DataError(std::string(what) + ": dimension mismatch (" + std::to_string(a.nx) + "," +
                    std::to_string(a.ny) + "," + std::to_string(a.nz) + ") vs (" +
                    std::to_string(b.nx) + "," + std::to_string(b.ny) + "," +
                    std::to_string(b.nz) + ")");
}

template <class Vec>
void require_finite(const Vec& v, const char* what) {
  for (size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(static_cast<double>(v[i])))
      throw DataError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
}

}  // namespace voxreg
