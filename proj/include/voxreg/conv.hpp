#pragma once

#include "voxreg/parallel.hpp"
#include "voxreg/tape.hpp"

namespace voxreg {

struct ConvSpec {
  int64_t stride = 1;
  int64_t dilation = 1;
  int64_t padding = 0;
};

inline int64_t conv_out_dim(int64_t in, int64_t k, const ConvSpec& cs) {
  return (in + 2 * cs.padding - cs.dilation * (k - 1) - 1) / cs.stride + 1;
}

/// Same-size padding for stride 1:  p = d*(k-1)/2  (k odd).
inline int64_t same_padding(int64_t k, int64_t dilation) { return dilation * (k - 1) / 2; }

namespace kernels {

// valid ox range for a tap: 0 <= ix_base + ox*s < X
inline void tap_bounds(int64_t ix_base, int64_t s, int64_t X, int64_t Xo, int64_t& ox0,
                       int64_t& ox1) {
  ox0 = 0;
  while (ix_base + ox0 * s < 0) ++ox0;
  ox1 = Xo;
  while (ox1 > ox0 && ix_base + (ox1 - 1) * s >= X) --ox1;
}

// fused 3-tap row update: dst[i] += w0*src[i+b0] + w1*src[i+b1] + w2*src[i+b2]
// with per-tap clipping against [0, src_len). The interior, where all taps
// are valid, runs as one vectorizable loop.
template <class T>
void row_tap3(T* dst, const T* src, const T w[3], const int64_t base[3], int64_t src_len,
              int64_t dst_len) {
  int64_t lo = 0, hi = dst_len;
  for (int j = 0; j < 3; ++j) {
    lo = std::max(lo, -base[j]);
    hi = std::min(hi, src_len - base[j]);
  }
  lo = std::min(lo, dst_len);
  hi = std::max(hi, lo);
  for (int j = 0; j < 3; ++j) {
    const T wv = w[j];
    const int64_t b = base[j];
    const int64_t e0 = std::max<int64_t>(0, -b), e1 = std::min(dst_len, src_len - b);
    for (int64_t i = e0; i < std::min(lo, e1); ++i) dst[i] += wv * src[i + b];
    for (int64_t i = std::max(hi, e0); i < e1; ++i) dst[i] += wv * src[i + b];
  }
  const T w0 = w[0], w1 = w[1], w2 = w[2];
  const T* s0 = src + base[0];
  const T* s1 = src + base[1];
  const T* s2 = src + base[2];
  for (int64_t i = lo; i < hi; ++i) dst[i] += w0 * s0[i] + w1 * s1[i] + w2 * s2[i];
}

// fused 3-tap row dot products: acc[j] += sum_i go[i] * src[i + base[j]]
template <class T>
void row_dot3(T acc[3], const T* go, const T* src, const int64_t base[3], int64_t src_len,
              int64_t go_len) {
  for (int j = 0; j < 3; ++j) {
    const int64_t b = base[j];
    const int64_t i0 = std::max<int64_t>(0, -b), i1 = std::min(go_len, src_len - b);
    T a = T(0);
    const T* s = src + b;
    for (int64_t i = i0; i < i1; ++i) a += go[i] * s[i];
    acc[j] += a;
  }
}

// x: (Cin,X,Y,Z), w: (Cout,Cin,k,k,k), b: (Cout) -> (Cout,X',Y',Z')
// Row-accumulator structure: one output row is built across all taps while
// it sits in cache, instead of sweeping the whole slab once per tap.
template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& cs) {
  const int64_t Cin = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int64_t Cout = w.dim(0), k = w.dim(2);
  const int64_t Xo = conv_out_dim(X, k, cs), Yo = conv_out_dim(Y, k, cs), Zo = conv_out_dim(Z, k, cs);
  if (Xo <= 0 || Yo <= 0 || Zo <= 0) throw std::invalid_argument("conv3d: non-positive output dims");
  Tensor<T> out({Cout, Xo, Yo, Zo});
  const int64_t s = cs.stride, d = cs.dilation, p = cs.padding;
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  // block output channels so each input row fetched from memory is reused
  // across the whole block while it sits in L1
  constexpr int64_t CB = 4;
  parallel_for(Cout, [&](int64_t co_lo, int64_t co_hi) {
    std::vector<T> rows(static_cast<size_t>(CB * Xo));
    for (int64_t co0 = co_lo; co0 < co_hi; co0 += CB) {
      const int64_t nb = std::min(CB, co_hi - co0);
      for (int64_t oz = 0; oz < Zo; ++oz)
        for (int64_t oy = 0; oy < Yo; ++oy) {
          for (int64_t j = 0; j < nb; ++j) {
            T* acc = rows.data() + j * Xo;
            const T bias = b.data[static_cast<size_t>(co0 + j)];
            for (int64_t ox = 0; ox < Xo; ++ox) acc[ox] = bias;
          }
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const T* xc = xp + ci * X * Y * Z;
            for (int64_t kz = 0; kz < k; ++kz) {
              const int64_t iz = oz * s - p + d * kz;
              if (iz < 0 || iz >= Z) continue;
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * s - p + d * ky;
                if (iy < 0 || iy >= Y) continue;
                const T* irow = xc + X * (iy + Y * iz);
                for (int64_t j = 0; j < nb; ++j) {
                  T* acc = rows.data() + j * Xo;
                  const T* wc = wp + ((co0 + j) * Cin + ci) * k * k * k;
                  if (s == 1 && k == 3) {
                    const T* w3 = wc + 3 * (ky + 3 * kz);
                    const int64_t base[3] = {-p, -p + d, -p + 2 * d};
                    row_tap3(acc, irow, w3, base, X, Xo);
                    continue;
                  }
                  for (int64_t kx = 0; kx < k; ++kx) {
                    const T wv = wc[kx + k * (ky + k * kz)];
                    const int64_t ix_base = -p + d * kx;
                    int64_t ox0, ox1;
                    tap_bounds(ix_base, s, X, Xo, ox0, ox1);
                    if (s == 1) {
                      const T* ir = irow + ix_base;
                      for (int64_t ox = ox0; ox < ox1; ++ox) acc[ox] += wv * ir[ox];
                    } else {
                      for (int64_t ox = ox0; ox < ox1; ++ox) acc[ox] += wv * irow[ix_base + ox * s];
                    }
                  }
                }
              }
            }
          }
          for (int64_t j = 0; j < nb; ++j)
            std::copy_n(rows.data() + j * Xo, Xo,
                        out.ptr() + (co0 + j) * Xo * Yo * Zo + Xo * (oy + Yo * oz));
        }
    }
  });
  return out;
}

template <class T>
void conv3d_backward_input(const Tensor<T>& go, const Tensor<T>& w, const ConvSpec& cs,
                           Tensor<T>& gx) {
  const int64_t Cin = gx.dim(0), X = gx.dim(1), Y = gx.dim(2), Z = gx.dim(3);
  const int64_t Cout = w.dim(0), k = w.dim(2);
  const int64_t Xo = go.dim(1), Yo = go.dim(2), Zo = go.dim(3);
  const int64_t s = cs.stride, d = cs.dilation, p = cs.padding;
  // scatter from outputs, parallel over input channels so the accumulation
  // targets are disjoint; input-grad rows accumulate while cache-resident
  parallel_for(Cin, [&](int64_t ci_lo, int64_t ci_hi) {
    for (int64_t ci = ci_lo; ci < ci_hi; ++ci) {
      T* gxc = gx.ptr() + ci * X * Y * Z;
      for (int64_t oz = 0; oz < Zo; ++oz)
        for (int64_t oy = 0; oy < Yo; ++oy)
          for (int64_t co = 0; co < Cout; ++co) {
            const T* grow = go.ptr() + co * Xo * Yo * Zo + Xo * (oy + Yo * oz);
            const T* wc = w.ptr() + (co * Cin + ci) * k * k * k;
            for (int64_t kz = 0; kz < k; ++kz) {
              const int64_t iz = oz * s - p + d * kz;
              if (iz < 0 || iz >= Z) continue;
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * s - p + d * ky;
                if (iy < 0 || iy >= Y) continue;
                T* xrow = gxc + X * (iy + Y * iz);
                if (s == 1 && k == 3) {
                  const T* w3 = wc + 3 * (ky + 3 * kz);
                  const int64_t base[3] = {p, p - d, p - 2 * d};
                  row_tap3(xrow, grow, w3, base, Xo, X);
                  continue;
                }
                for (int64_t kx = 0; kx < k; ++kx) {
                  const T wv = wc[kx + k * (ky + k * kz)];
                  const int64_t ix_base = -p + d * kx;
                  int64_t ox0, ox1;
                  tap_bounds(ix_base, s, X, Xo, ox0, ox1);
                  if (s == 1) {
                    T* xr = xrow + ix_base;
                    for (int64_t ox = ox0; ox < ox1; ++ox) xr[ox] += wv * grow[ox];
                  } else {
                    for (int64_t ox = ox0; ox < ox1; ++ox) xrow[ix_base + ox * s] += wv * grow[ox];
                  }
                }
              }
            }
          }
    }
  });
}

template <class T>
void conv3d_backward_weight(const Tensor<T>& go, const Tensor<T>& x, const ConvSpec& cs,
                            Tensor<T>& gw) {
  const int64_t Cin = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int64_t Cout = gw.dim(0), k = gw.dim(2);
  const int64_t Xo = go.dim(1), Yo = go.dim(2), Zo = go.dim(3);
  const int64_t s = cs.stride, d = cs.dilation, p = cs.padding;
  parallel_for(Cout, [&](int64_t co_lo, int64_t co_hi) {
    std::vector<T> acc(static_cast<size_t>(k * k * k));
    for (int64_t co = co_lo; co < co_hi; ++co) {
      const T* gop = go.ptr() + co * Xo * Yo * Zo;
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const T* xc = x.ptr() + ci * X * Y * Z;
        std::fill(acc.begin(), acc.end(), T(0));
        for (int64_t oz = 0; oz < Zo; ++oz)
          for (int64_t oy = 0; oy < Yo; ++oy) {
            const T* grow = gop + Xo * (oy + Yo * oz);
            for (int64_t kz = 0; kz < k; ++kz) {
              const int64_t iz = oz * s - p + d * kz;
              if (iz < 0 || iz >= Z) continue;
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * s - p + d * ky;
                if (iy < 0 || iy >= Y) continue;
                const T* irow = xc + X * (iy + Y * iz);
                if (s == 1 && k == 3) {
                  const int64_t base[3] = {-p, -p + d, -p + 2 * d};
                  row_dot3(acc.data() + 3 * (ky + 3 * kz), grow, irow, base, X, Xo);
                  continue;
                }
                for (int64_t kx = 0; kx < k; ++kx) {
                  const int64_t ix_base = -p + d * kx;
                  int64_t ox0, ox1;
                  tap_bounds(ix_base, s, X, Xo, ox0, ox1);
                  T a = T(0);
                  if (s == 1) {
                    const T* ir = irow + ix_base;
                    for (int64_t ox = ox0; ox < ox1; ++ox) a += grow[ox] * ir[ox];
                  } else {
                    for (int64_t ox = ox0; ox < ox1; ++ox) a += grow[ox] * irow[ix_base + ox * s];
                  }
                  acc[static_cast<size_t>(kx + k * (ky + k * kz))] += a;
                }
              }
            }
          }
        T* gwc = gw.ptr() + (co * Cin + ci) * k * k * k;
        for (int64_t i = 0; i < k * k * k; ++i) gwc[i] += acc[static_cast<size_t>(i)];
      }
    }
  });
}

template <class T>
void conv3d_backward_bias(const Tensor<T>& go, Tensor<T>& gb) {
  const int64_t Cout = go.dim(0);
  const int64_t n = go.numel() / Cout;
  for (int64_t co = 0; co < Cout; ++co) {
    T acc = T(0);
    const T* p = go.ptr() + co * n;
    for (int64_t i = 0; i < n; ++i) acc += p[i];
    gb.data[static_cast<size_t>(co)] += acc;
  }
}

// trilinear 2x upsample along each spatial axis.
// out(2i)   = in(i)
// out(2i+1) = (in(i) + in(min(i+1, n-1))) / 2
template <class T>
Tensor<T> upsample2x_forward(const Tensor<T>& x) {
  const int64_t C = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  Tensor<T> out({C, 2 * X, 2 * Y, 2 * Z});
  const int64_t Xo = 2 * X, Yo = 2 * Y, Zo = 2 * Z;
  for (int64_t c = 0; c < C; ++c) {
    const T* xc = x.ptr() + c * X * Y * Z;
    T* oc = out.ptr() + c * Xo * Yo * Zo;
    for (int64_t oz = 0; oz < Zo; ++oz) {
      const int64_t z0 = oz / 2, z1 = std::min((oz + 1) / 2, Z - 1);
      const T fz = (oz % 2) ? T(0.5) : T(1);
      for (int64_t oy = 0; oy < Yo; ++oy) {
        const int64_t y0 = oy / 2, y1 = std::min((oy + 1) / 2, Y - 1);
        const T fy = (oy % 2) ? T(0.5) : T(1);
        T* orow = oc + Xo * (oy + Yo * oz);
        for (int64_t ox = 0; ox < Xo; ++ox) {
          const int64_t x0 = ox / 2, x1 = std::min((ox + 1) / 2, X - 1);
          const T fx = (ox % 2) ? T(0.5) : T(1);
          T acc = T(0);
          // corners of the (up to) 2x2x2 source cell; weights multiply to 1
          for (int dz = 0; dz < (oz % 2 ? 2 : 1); ++dz)
            for (int dy = 0; dy < (oy % 2 ? 2 : 1); ++dy)
              for (int dx = 0; dx < (ox % 2 ? 2 : 1); ++dx) {
                const int64_t sx = dx ? x1 : x0, sy = dy ? y1 : y0, sz = dz ? z1 : z0;
                acc += xc[vidx(sx, sy, sz, X, Y)];
              }
          orow[ox] = acc * fx * fy * fz;
        }
      }
    }
  }
  return out;
}

template <class T>
void upsample2x_backward(const Tensor<T>& go, Tensor<T>& gx) {
  const int64_t C = gx.dim(0), X = gx.dim(1), Y = gx.dim(2), Z = gx.dim(3);
  const int64_t Xo = 2 * X, Yo = 2 * Y, Zo = 2 * Z;
  for (int64_t c = 0; c < C; ++c) {
    T* gc = gx.ptr() + c * X * Y * Z;
    const T* oc = go.ptr() + c * Xo * Yo * Zo;
    for (int64_t oz = 0; oz < Zo; ++oz) {
      const int64_t z0 = oz / 2, z1 = std::min((oz + 1) / 2, Z - 1);
      const T fz = (oz % 2) ? T(0.5) : T(1);
      for (int64_t oy = 0; oy < Yo; ++oy) {
        const int64_t y0 = oy / 2, y1 = std::min((oy + 1) / 2, Y - 1);
        const T fy = (oy % 2) ? T(0.5) : T(1);
        const T* orow = oc + Xo * (oy + Yo * oz);
        for (int64_t ox = 0; ox < Xo; ++ox) {
          const int64_t x0 = ox / 2, x1 = std::min((ox + 1) / 2, X - 1);
          const T fx = (ox % 2) ? T(0.5) : T(1);
          const T g = orow[ox] * fx * fy * fz;
          for (int dz = 0; dz < (oz % 2 ? 2 : 1); ++dz)
            for (int dy = 0; dy < (oy % 2 ? 2 : 1); ++dy)
              for (int dx = 0; dx < (ox % 2 ? 2 : 1); ++dx) {
                const int64_t sx = dx ? x1 : x0, sy = dy ? y1 : y0, sz = dz ? z1 : z0;
                gc[vidx(sx, sy, sz, X, Y)] += g;
              }
        }
      }
    }
  }
}

// clipped box sum: out(p) = sum of in(q) over |q_d - p_d| <= r, q inside the
// grid. Separable running sums, one axis at a time. Self-adjoint.
template <class T>
void boxsum_axis(const T* in, T* out, int64_t outer, int64_t ax, int64_t inner, int64_t r) {
  std::vector<T> acc(static_cast<size_t>(inner));
  for (int64_t o = 0; o < outer; ++o) {
    const T* base = in + o * ax * inner;
    T* obase = out + o * ax * inner;
    std::fill(acc.begin(), acc.end(), T(0));
    const int64_t warm = std::min(r, ax - 1);
    for (int64_t j = 0; j <= warm; ++j)
      for (int64_t i = 0; i < inner; ++i) acc[static_cast<size_t>(i)] += base[j * inner + i];
    for (int64_t j = 0; j < ax; ++j) {
      for (int64_t i = 0; i < inner; ++i) obase[j * inner + i] = acc[static_cast<size_t>(i)];
      const int64_t drop = j - r, take = j + r + 1;
      if (take < ax)
        for (int64_t i = 0; i < inner; ++i) acc[static_cast<size_t>(i)] += base[take * inner + i];
      if (drop >= 0)
        for (int64_t i = 0; i < inner; ++i) acc[static_cast<size_t>(i)] -= base[drop * inner + i];
    }
  }
}

template <class T>
Tensor<T> boxsum3d(const Tensor<T>& x, int64_t r) {
  // x: (C,X,Y,Z)
  const int64_t C = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  Tensor<T> a(x.shape), b(x.shape);
  // layout is x-fastest: axis x has inner=1, axis y inner=X, axis z inner=X*Y
  boxsum_axis(x.ptr(), a.ptr(), C * Z * Y, X, int64_t(1), r);
  boxsum_axis(a.ptr(), b.ptr(), C * Z, Y, X, r);
  boxsum_axis(b.ptr(), a.ptr(), C, Z, X * Y, r);
  return a;
}

}  // namespace kernels

// ---- tape ops ----------------------------------------------------------

template <class T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b, const ConvSpec& cs) {
  if (x.value().rank() != 4 || w.value().rank() != 5)
    throw std::invalid_argument("conv3d: expects x (Cin,X,Y,Z), w (Cout,Cin,k,k,k)");
  if (w.value().dim(1) != x.value().dim(0))
    throw std::invalid_argument("conv3d: Cin mismatch");
  if (w.value().dim(2) % 2 == 0) throw std::invalid_argument("conv3d: kernel size must be odd");
  if (cs.dilation < 1 || cs.stride < 1) throw std::invalid_argument("conv3d: stride/dilation < 1");
  Tensor<T> out = kernels::conv3d_forward(x.value(), w.value(), b.value(), cs);
  int ix = x.id, iw = w.id, ib = b.id;
  return x.tape->record(std::move(out), {ix, iw, ib}, [ix, iw, ib, cs](Tape<T>& t, const auto& n) {
    if (t.wants_grad(ix)) kernels::conv3d_backward_input(n.grad, t.node(iw).value, cs, t.grad(ix));
    if (t.wants_grad(iw)) kernels::conv3d_backward_weight(n.grad, t.node(ix).value, cs, t.grad(iw));
    if (t.wants_grad(ib)) kernels::conv3d_backward_bias(n.grad, t.grad(ib));
  });
}

template <class T>
Var<T> upsample_trilinear2x(Var<T> x) {
  if (x.value().rank() != 4) throw std::invalid_argument("upsample: expects (C,X,Y,Z)");
  Tensor<T> out = kernels::upsample2x_forward(x.value());
  int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix](Tape<T>& t, const auto& n) {
    kernels::upsample2x_backward(n.grad, t.grad(ix));
  });
}

template <class T>
Var<T> box_sum(Var<T> x, int64_t r) {
  if (x.value().rank() != 4) throw std::invalid_argument("box_sum: expects (C,X,Y,Z)");
  if (r < 1) throw std::invalid_argument("box_sum: radius < 1");
  Tensor<T> out = kernels::boxsum3d(x.value(), r);
  int ix = x.id;
  return x.tape->record(std::move(out), {ix}, [ix, r](Tape<T>& t, const auto& n) {
    Tensor<T> g = kernels::boxsum3d(n.grad, r);
    auto& gx = t.grad(ix);
    for (int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += g.data[i];
  });
}

}  // namespace voxreg
