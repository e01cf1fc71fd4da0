#pragma once

// Independent brute-force references used to check the fast implementations.
// Everything here is written as directly as possible: explicit loops, no
// shared code with the library kernels.

#include "voxreg/tensor.hpp"
#include "voxreg/volume.hpp"

namespace oracle {

using voxreg::Tensor;

/// 7-loop direct convolution, zero padding.
template <class T>
Tensor<T> conv3d_brute(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int64_t stride,
                       int64_t dilation, int64_t padding) {
  const int64_t Cin = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int64_t Cout = w.dim(0), k = w.dim(2);
  const int64_t Xo = (X + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const int64_t Yo = (Y + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  const int64_t Zo = (Z + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  Tensor<T> out({Cout, Xo, Yo, Zo});
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t oz = 0; oz < Zo; ++oz)
      for (int64_t oy = 0; oy < Yo; ++oy)
        for (int64_t ox = 0; ox < Xo; ++ox) {
          T acc = b.data[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t kz = 0; kz < k; ++kz)
              for (int64_t ky = 0; ky < k; ++ky)
                for (int64_t kx = 0; kx < k; ++kx) {
                  const int64_t ix = ox * stride - padding + dilation * kx;
                  const int64_t iy = oy * stride - padding + dilation * ky;
                  const int64_t iz = oz * stride - padding + dilation * kz;
                  if (ix < 0 || ix >= X || iy < 0 || iy >= Y || iz < 0 || iz >= Z) continue;
                  acc += w.data[static_cast<size_t>(
                             kx + k * (ky + k * (kz + k * (ci + Cin * co))))] *
                         x.data[static_cast<size_t>(ci * X * Y * Z + ix + X * (iy + Y * iz))];
                }
          out.data[static_cast<size_t>(co * Xo * Yo * Zo + ox + Xo * (oy + Yo * oz))] = acc;
        }
  return out;
}

/// LNCC exactly as written: per voxel p, window Z = {-r..r}^3 clipped to the
/// domain, local means over the clipped window.
template <class T>
T lncc_brute(const Tensor<T>& f, const Tensor<T>& w, int64_t r, T eps) {
  const int64_t X = f.dim(1), Y = f.dim(2), Z = f.dim(3);
  T total = T(0);
  for (int64_t pz = 0; pz < Z; ++pz)
    for (int64_t py = 0; py < Y; ++py)
      for (int64_t px = 0; px < X; ++px) {
        T sf = 0, sw = 0;
        int64_t n = 0;
        for (int64_t qz = std::max<int64_t>(0, pz - r); qz <= std::min(Z - 1, pz + r); ++qz)
          for (int64_t qy = std::max<int64_t>(0, py - r); qy <= std::min(Y - 1, py + r); ++qy)
            for (int64_t qx = std::max<int64_t>(0, px - r); qx <= std::min(X - 1, px + r); ++qx) {
              sf += f.data[static_cast<size_t>(qx + X * (qy + Y * qz))];
              sw += w.data[static_cast<size_t>(qx + X * (qy + Y * qz))];
              ++n;
            }
        const T mf = sf / static_cast<T>(n), mw = sw / static_cast<T>(n);
        T cross = 0, vf = 0, vw = 0;
        for (int64_t qz = std::max<int64_t>(0, pz - r); qz <= std::min(Z - 1, pz + r); ++qz)
          for (int64_t qy = std::max<int64_t>(0, py - r); qy <= std::min(Y - 1, py + r); ++qy)
            for (int64_t qx = std::max<int64_t>(0, px - r); qx <= std::min(X - 1, px + r); ++qx) {
              const T df = f.data[static_cast<size_t>(qx + X * (qy + Y * qz))] - mf;
              const T dw = w.data[static_cast<size_t>(qx + X * (qy + Y * qz))] - mw;
              cross += df * dw;
              vf += df * df;
              vw += dw * dw;
            }
        total += cross * cross / (vf * vw + eps);
      }
  return total;
}

/// Sum of squared forward differences, replicate boundary (last plane
/// difference is zero).
template <class T>
T sobolev_brute(const Tensor<T>& u) {
  const int64_t C = u.dim(0), X = u.dim(1), Y = u.dim(2), Z = u.dim(3);
  auto at = [&](int64_t c, int64_t x, int64_t y, int64_t z) {
    return u.data[static_cast<size_t>(c * X * Y * Z + x + X * (y + Y * z))];
  };
  T total = 0;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t z = 0; z < Z; ++z)
      for (int64_t y = 0; y < Y; ++y)
        for (int64_t x = 0; x < X; ++x) {
          const T dx = x + 1 < X ? at(c, x + 1, y, z) - at(c, x, y, z) : T(0);
          const T dy = y + 1 < Y ? at(c, x, y + 1, z) - at(c, x, y, z) : T(0);
          const T dz = z + 1 < Z ? at(c, x, y, z + 1) - at(c, x, y, z) : T(0);
          total += dx * dx + dy * dy + dz * dz;
        }
  return total;
}

}  // namespace oracle
