#pragma once

#include "voxreg/conv.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

struct LossConfig {
  int64_t window_radius = 4;  // Z = {-r..r}^3, default 9x9x9
  double alpha = 1.0;
  double epsilon = 1e-5;

  void validate() const {
    if (window_radius < 1) throw std::invalid_argument("LossConfig: window radius must be >= 1");
    if (alpha < 0) throw std::invalid_argument("LossConfig: alpha must be >= 0");
    if (epsilon <= 0) throw std::invalid_argument("LossConfig: epsilon must be > 0");
  }
};

/// Windowed squared correlation, summed over all voxels. Windows are clipped
/// to the image domain, so local statistics near the boundary use fewer
/// samples. The per-voxel term is cross^2 / (var_f * var_w + eps) in [0,1].
template <class T>
Var<T> lncc(Var<T> f, Var<T> w, const LossConfig& cfg) {
  cfg.validate();
  detail::check_same_shape(f, w, "lncc");
  const int64_t r = cfg.window_radius;
  Tape<T>& tape = *f.tape;
  // per-voxel window population (boundary windows are smaller)
  Var<T> ones = tape.leaf(Tensor<T>::full(f.value().shape, T(1)));
  Var<T> n = box_sum(ones, r);
  Var<T> inv_n = div(ones, n);

  Var<T> sf = box_sum(f, r);
  Var<T> sw = box_sum(w, r);
  Var<T> sff = box_sum(square(f), r);
  Var<T> sww = box_sum(square(w), r);
  Var<T> sfw = box_sum(mul(f, w), r);

  Var<T> cross = sub(sfw, mul(mul(sf, sw), inv_n));
  // clamp variances at zero: they are non-negative in exact arithmetic but
  // the sum-of-squares form can cancel below zero on flat patches
  Var<T> var_f = relu(sub(sff, mul(mul(sf, sf), inv_n)));
  Var<T> var_w = relu(sub(sww, mul(mul(sw, sw), inv_n)));
  Var<T> denom = add_scalar(mul(var_f, var_w), static_cast<T>(cfg.epsilon));
  Var<T> term = div(square(cross), denom);
  return vsum(term);
}

/// Sum over voxels and components of the squared forward-difference gradient
/// of u. Replicate (Neumann) boundary: the difference at the last plane of an
/// axis is zero and drops out of the sum.
template <class T>
Var<T> sobolev_norm(Var<T> u) {
  if (u.value().rank() != 4) throw std::invalid_argument("sobolev_norm: expects (C,X,Y,Z)");
  Tape<T>& tape = *u.tape;
  Var<T> total = tape.leaf(Tensor<T>::scalar(T(0)));
  for (int axis = 1; axis < 4; ++axis) {
    const int64_t n = u.value().dim(axis);
    if (n < 2) continue;
    Var<T> hi = slice(u, axis, 1, n - 1);
    Var<T> lo = slice(u, axis, 0, n - 1);
    total = add(total, vsum(square(sub(hi, lo))));
  }
  return total;
}

/// Eq-style unsupervised objective:
///   loss = -lncc(f, m∘Φ)/|Ω| + alpha * sobolev(u)/|Ω|
/// Returns the scalar loss plus the two normalized terms for logging.
template <class T>
struct LossParts {
  Var<T> total;
  T similarity_term;  // -lncc/|Omega|
  T regularizer_term;  // alpha * sobolev/|Omega|
};

template <class T>
LossParts<T> total_loss(Var<T> f, Var<T> m, Var<T> u, const LossConfig& cfg) {
  cfg.validate();
  Var<T> warped = warp(m, u);
  Var<T> sim = lncc(f, warped, cfg);
  Var<T> reg = sobolev_norm(u);
  const T inv_omega = T(1) / static_cast<T>(f.numel());
  Var<T> sim_term = scalar_mul(sim, -inv_omega);
  Var<T> reg_term = scalar_mul(reg, static_cast<T>(cfg.alpha) * inv_omega);
  LossParts<T> parts;
  parts.total = add(sim_term, reg_term);
  parts.similarity_term = sim_term.value().data[0];
  parts.regularizer_term = reg_term.value().data[0];
  return parts;
}

// ---- non-differentiable conveniences on plain volumes -------------------

inline double lncc_value(const Volume& f, const Volume& w, const LossConfig& cfg) {
  require_same_dims(f.dims, w.dims, "lncc");
  Tape<double> tape;
  auto vf = tape.leaf(f.to_tensor().cast<double>());
  auto vw = tape.leaf(w.to_tensor().cast<double>());
  return lncc(vf, vw, cfg).value().data[0];
}

inline double sobolev_value(const DisplacementField& u) {
  Tape<double> tape;
  auto vu = tape.leaf(u.to_tensor().cast<double>());
  return sobolev_norm(vu).value().data[0];
}

}  // namespace voxreg
