#pragma once

#include "voxreg/tape.hpp"
#include "voxreg/volume.hpp"

namespace voxreg {

namespace kernels {

template <class T>
T clampT(T v, T lo, T hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

/// Trilinear sample of a (1,X,Y,Z) image at deformed coordinates p + u(p),
/// clamped to the grid box. m: (1,X,Y,Z), u: (3,X,Y,Z) -> (1,X,Y,Z).
template <class T>
Tensor<T> warp_forward(const Tensor<T>& m, const Tensor<T>& u) {
  const int64_t X = m.dim(1), Y = m.dim(2), Z = m.dim(3);
  const int64_t N = X * Y * Z;
  Tensor<T> out(m.shape);
  const T* mp = m.ptr();
  const T* ux = u.ptr();
  const T* uy = ux + N;
  const T* uz = uy + N;
  for (int64_t z = 0; z < Z; ++z)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t x = 0; x < X; ++x) {
        const int64_t i = vidx(x, y, z, X, Y);
        const T px = clampT<T>(static_cast<T>(x) + ux[i], T(0), static_cast<T>(X - 1));
        const T py = clampT<T>(static_cast<T>(y) + uy[i], T(0), static_cast<T>(Y - 1));
        const T pz = clampT<T>(static_cast<T>(z) + uz[i], T(0), static_cast<T>(Z - 1));
        const int64_t x0 = static_cast<int64_t>(std::floor(px));
        const int64_t y0 = static_cast<int64_t>(std::floor(py));
        const int64_t z0 = static_cast<int64_t>(std::floor(pz));
        const int64_t x1 = std::min(x0 + 1, X - 1);
        const int64_t y1 = std::min(y0 + 1, Y - 1);
        const int64_t z1 = std::min(z0 + 1, Z - 1);
        const T fx = px - static_cast<T>(x0);
        const T fy = py - static_cast<T>(y0);
        const T fz = pz - static_cast<T>(z0);
        const T c000 = mp[vidx(x0, y0, z0, X, Y)], c100 = mp[vidx(x1, y0, z0, X, Y)];
        const T c010 = mp[vidx(x0, y1, z0, X, Y)], c110 = mp[vidx(x1, y1, z0, X, Y)];
        const T c001 = mp[vidx(x0, y0, z1, X, Y)], c101 = mp[vidx(x1, y0, z1, X, Y)];
        const T c011 = mp[vidx(x0, y1, z1, X, Y)], c111 = mp[vidx(x1, y1, z1, X, Y)];
        const T c00 = c000 + fx * (c100 - c000);
        const T c10 = c010 + fx * (c110 - c010);
        const T c01 = c001 + fx * (c101 - c001);
        const T c11 = c011 + fx * (c111 - c011);
        const T c0 = c00 + fy * (c10 - c00);
        const T c1 = c01 + fy * (c11 - c01);
        out.data[static_cast<size_t>(i)] = c0 + fz * (c1 - c0);
      }
  return out;
}

/// Gradients of warp_forward w.r.t. the image and the displacement field.
/// Sample coordinates on the clamp boundary contribute zero to grad_u.
template <class T>
void warp_backward(const Tensor<T>& go, const Tensor<T>& m, const Tensor<T>& u, Tensor<T>* gm,
                   Tensor<T>* gu) {
  const int64_t X = m.dim(1), Y = m.dim(2), Z = m.dim(3);
  const int64_t N = X * Y * Z;
  const T* mp = m.ptr();
  const T* ux = u.ptr();
  const T* uy = ux + N;
  const T* uz = uy + N;
  for (int64_t z = 0; z < Z; ++z)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t x = 0; x < X; ++x) {
        const int64_t i = vidx(x, y, z, X, Y);
        const T g = go.data[static_cast<size_t>(i)];
        if (g == T(0)) continue;
        const T rx = static_cast<T>(x) + ux[i];
        const T ry = static_cast<T>(y) + uy[i];
        const T rz = static_cast<T>(z) + uz[i];
        const bool cx = rx <= T(0) || rx >= static_cast<T>(X - 1);
        const bool cy = ry <= T(0) || ry >= static_cast<T>(Y - 1);
        const bool cz = rz <= T(0) || rz >= static_cast<T>(Z - 1);
        const T px = clampT<T>(rx, T(0), static_cast<T>(X - 1));
        const T py = clampT<T>(ry, T(0), static_cast<T>(Y - 1));
        const T pz = clampT<T>(rz, T(0), static_cast<T>(Z - 1));
        const int64_t x0 = static_cast<int64_t>(std::floor(px));
        const int64_t y0 = static_cast<int64_t>(std::floor(py));
        const int64_t z0 = static_cast<int64_t>(std::floor(pz));
        const int64_t x1 = std::min(x0 + 1, X - 1);
        const int64_t y1 = std::min(y0 + 1, Y - 1);
        const int64_t z1 = std::min(z0 + 1, Z - 1);
        const T fx = px - static_cast<T>(x0);
        const T fy = py - static_cast<T>(y0);
        const T fz = pz - static_cast<T>(z0);
        const T wx[2] = {T(1) - fx, fx};
        const T wy[2] = {T(1) - fy, fy};
        const T wz[2] = {T(1) - fz, fz};
        const int64_t xs[2] = {x0, x1}, ys[2] = {y0, y1}, zs[2] = {z0, z1};
        if (gm) {
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                gm->data[static_cast<size_t>(vidx(xs[dx], ys[dy], zs[dz], X, Y))] +=
                    g * wx[dx] * wy[dy] * wz[dz];
        }
        if (gu) {
          T dpx = T(0), dpy = T(0), dpz = T(0);
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const T mv = mp[vidx(xs[dx], ys[dy], zs[dz], X, Y)];
                const T sx = dx ? T(1) : T(-1);
                const T sy = dy ? T(1) : T(-1);
                const T sz = dz ? T(1) : T(-1);
                dpx += mv * sx * wy[dy] * wz[dz];
                dpy += mv * wx[dx] * sy * wz[dz];
                dpz += mv * wx[dx] * wy[dy] * sz;
              }
          if (!cx) gu->data[static_cast<size_t>(i)] += g * dpx;
          if (!cy) gu->data[static_cast<size_t>(N + i)] += g * dpy;
          if (!cz) gu->data[static_cast<size_t>(2 * N + i)] += g * dpz;
        }
      }
}

}  // namespace kernels

/// Differentiable trilinear warp on the tape: m (1,X,Y,Z), u (3,X,Y,Z).
template <class T>
Var<T> warp(Var<T> m, Var<T> u) {
  if (m.value().rank() != 4 || m.value().dim(0) != 1)
    throw std::invalid_argument("warp: m must be (1,X,Y,Z)");
  if (u.value().rank() != 4 || u.value().dim(0) != 3)
    throw std::invalid_argument("warp: u must be (3,X,Y,Z)");
  for (int i = 1; i < 4; ++i)
    if (m.value().dim(i) != u.value().dim(i))
      throw std::invalid_argument("warp: spatial dims of m and u differ");
  Tensor<T> out = kernels::warp_forward(m.value(), u.value());
  int im = m.id, iu = u.id;
  return m.tape->record(std::move(out), {im, iu}, [im, iu](Tape<T>& t, const auto& n) {
    Tensor<T>* gm = t.wants_grad(im) ? &t.grad(im) : nullptr;
    Tensor<T>* gu = t.wants_grad(iu) ? &t.grad(iu) : nullptr;
    kernels::warp_backward(n.grad, t.node(im).value, t.node(iu).value, gm, gu);
  });
}

/// Non-differentiable convenience warp on plain volumes.
inline Volume warp_trilinear(const Volume& m, const DisplacementField& u) {
  require_same_dims(m.dims, u.dims, "warp_trilinear");
  return Volume::from_tensor(kernels::warp_forward(m.to_tensor(), u.to_tensor()));
}

/// Nearest-neighbor label warp: label at p is taken at the rounded, clamped
/// deformed coordinate. Rounding is half-away-from-zero (std::round).
inline LabelVolume warp_nearest(const LabelVolume& labels, const DisplacementField& u) {
  require_same_dims(labels.dims, u.dims, "warp_nearest");
  const int64_t X = labels.dims.nx, Y = labels.dims.ny, Z = labels.dims.nz;
  LabelVolume out(labels.dims);
  for (int64_t z = 0; z < Z; ++z)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t x = 0; x < X; ++x) {
        const auto rd = [](double v, int64_t n) {
          int64_t i = static_cast<int64_t>(std::llround(v));
          return i < 0 ? int64_t(0) : (i >= n ? n - 1 : i);
        };
        const int64_t sx = rd(static_cast<double>(x) + u.u(0, x, y, z), X);
        const int64_t sy = rd(static_cast<double>(y) + u.u(1, x, y, z), Y);
        const int64_t sz = rd(static_cast<double>(z) + u.u(2, x, y, z), Z);
        out.at(x, y, z) = labels.at(sx, sy, sz);
      }
  return out;
}

}  // namespace voxreg
