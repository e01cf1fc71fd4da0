#pragma once

#include <functional>
#include <iostream>

#include "voxreg/conv.hpp"
#include "voxreg/loss.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

/// Double-precision central-difference verification of reverse-mode
/// gradients. `fn` rebuilds the computation from leaf tensors each call and
/// returns a scalar; gradients are checked for every leaf elementwise with
///   |analytic - numeric| / max(1, |analytic|) < tol.
struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst;  // "<leaf>/<flat index>"
};

inline GradCheckResult gradcheck(
    const std::function<double(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> leaves,
    const std::function<std::vector<Tensor<double>>(const std::vector<Tensor<double>>&)>&
        analytic_grads,
    double tol = 1e-4, double h = 1e-4) {
  GradCheckResult r;
  const std::vector<Tensor<double>> grads = analytic_grads(leaves);
  for (size_t k = 0; k < leaves.size(); ++k) {
    for (int64_t i = 0; i < leaves[k].numel(); ++i) {
      const double keep = leaves[k].data[i];
      leaves[k].data[i] = keep + h;
      const double fp = fn(leaves);
      leaves[k].data[i] = keep - h;
      const double fm = fn(leaves);
      leaves[k].data[i] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = grads[k].data[i];
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst = "leaf" + std::to_string(k) + "/" + std::to_string(i);
      }
    }
  }
  r.pass = r.max_rel_err < tol;
  return r;
}

/// Convenience wrapper: builds the graph once for analytic gradients and
/// re-evaluates it for the finite differences.
inline GradCheckResult gradcheck_scalar_fn(
    const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& build,
    std::vector<Tensor<double>> leaves, double tol = 1e-4, double h = 1e-4) {
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
    return build(tape, vars).value().data[0];
  };
  auto grads = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
    Var<double> loss = build(tape, vars);
    tape.backward(loss);
    std::vector<Tensor<double>> out;
    for (auto& v : vars) {
      Tensor<double> g = v.grad();
      if (g.shape.empty()) g = Tensor<double>::zeros(v.value().shape);
      out.push_back(std::move(g));
    }
    return out;
  };
  return gradcheck(eval, std::move(leaves), grads, tol, h);
}

// ---- the per-op suite used by both `voxreg gradcheck` and the tests ------

struct GradCheckCase {
  std::string name;
  GradCheckResult result;
};

inline std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed) {
  std::mt19937 rng(static_cast<uint32_t>(seed * 2654435761u + 1u));
  std::vector<GradCheckCase> cases;
  auto rnd = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    return random_uniform<double>(std::move(s), lo, hi, rng);
  };
  auto check = [&](const std::string& name, auto build, std::vector<Tensor<double>> leaves,
                   double tol = 1e-4) {
    cases.push_back({name, gradcheck_scalar_fn(build, std::move(leaves), tol)});
  };

  check("add_mul_sub", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vsum(mul(add(v[0], v[1]), sub(v[0], v[1])));
  }, {rnd({2, 3}), rnd({2, 3})});

  check("div", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vsum(div(v[0], v[1]));
  }, {rnd({2, 3}), rnd({2, 3}, 1.0, 2.0)});

  check("leaky_relu", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vsum(leaky_relu(v[0], 0.2));
  }, {rnd({4, 5}, -2.0, 2.0)});

  check("square_mean", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vmean(square(v[0]));
  }, {rnd({3, 4})});

  check("scalar_ops", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vsum(add_scalar(scalar_mul(v[0], 1.7), 0.3));
  }, {rnd({2, 2, 2})});

  check("concat_slice", [](Tape<double>& t, std::vector<Var<double>>& v) {
    Var<double> c = concat<double>({v[0], v[1]}, 1);
    return vsum(square(slice(c, 1, 1, 3)));
  }, {rnd({2, 2, 3}), rnd({2, 3, 3})});

  {
    ConvSpec cs{1, 1, 1};
    check("conv3d_k3_same", [cs](Tape<double>& t, std::vector<Var<double>>& v) {
      return vsum(square(conv3d(v[0], v[1], v[2], cs)));
    }, {rnd({2, 4, 4, 4}), rnd({3, 2, 3, 3, 3}), rnd({3})});
  }
  {
    ConvSpec cs{1, 2, 2};
    check("conv3d_dilation2", [cs](Tape<double>& t, std::vector<Var<double>>& v) {
      return vsum(square(conv3d(v[0], v[1], v[2], cs)));
    }, {rnd({1, 6, 6, 6}), rnd({2, 1, 3, 3, 3}), rnd({2})});
  }
  {
    ConvSpec cs{1, 4, 4};
    check("conv3d_dilation4", [cs](Tape<double>& t, std::vector<Var<double>>& v) {
      return vsum(square(conv3d(v[0], v[1], v[2], cs)));
    }, {rnd({1, 9, 9, 9}), rnd({1, 1, 3, 3, 3}), rnd({1})});
  }
  {
    ConvSpec cs{2, 1, 1};
    check("conv3d_stride2", [cs](Tape<double>& t, std::vector<Var<double>>& v) {
      return vsum(square(conv3d(v[0], v[1], v[2], cs)));
    }, {rnd({2, 6, 6, 6}), rnd({2, 2, 3, 3, 3}), rnd({2})});
  }

  check("trilinear_upsample", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vsum(square(upsample_trilinear2x(v[0])));
  }, {rnd({2, 4, 4, 4})});

  check("box_sum", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return vsum(square(box_sum(v[0], 2)));
  }, {rnd({1, 5, 5, 5})});

  {
    // keep sample offsets away from lattice points and from the boundary
    Tensor<double> m = rnd({1, 6, 6, 6});
    Tensor<double> u = rnd({3, 6, 6, 6}, -0.45, 0.45);
    for (auto& x : u.data)
      if (std::abs(x) < 0.05) x += x >= 0 ? 0.06 : -0.06;
    check("warp_trilinear", [](Tape<double>& t, std::vector<Var<double>>& v) {
      return vsum(square(warp(v[0], v[1])));
    }, {m, u});
  }

  {
    LossConfig lc;
    lc.window_radius = 2;
    check("lncc", [lc](Tape<double>& t, std::vector<Var<double>>& v) {
      return lncc(v[0], v[1], lc);
    }, {rnd({1, 6, 6, 6}, 0.0, 1.0), rnd({1, 6, 6, 6}, 0.0, 1.0)});
  }

  check("sobolev_norm", [](Tape<double>& t, std::vector<Var<double>>& v) {
    return sobolev_norm(v[0]);
  }, {rnd({3, 4, 4, 4})});

  {
    LossConfig lc;
    lc.window_radius = 2;
    lc.alpha = 0.7;
    Tensor<double> f = rnd({1, 6, 6, 6}, 0.0, 1.0);
    Tensor<double> m = rnd({1, 6, 6, 6}, 0.0, 1.0);
    Tensor<double> u = rnd({3, 6, 6, 6}, -0.4, 0.4);
    for (auto& x : u.data)
      if (std::abs(x) < 0.05) x += x >= 0 ? 0.06 : -0.06;
    check("total_loss", [lc](Tape<double>& t, std::vector<Var<double>>& v) {
      return total_loss(v[0], v[1], v[2], lc).total;
    }, {f, m, u}, 1e-3);
  }

  {
    // composite pipeline: conv -> square -> sum; smooth everywhere, so the
    // finite differences cannot straddle an activation kink
    ConvSpec cs{1, 1, 1};
    check("conv_square_sum", [cs](Tape<double>& t, std::vector<Var<double>>& v) {
      return vsum(square(conv3d(v[0], v[1], v[2], cs)));
    }, {rnd({2, 4, 4, 4}), rnd({2, 2, 3, 3, 3}), rnd({2})});
  }

  return cases;
}

}  // namespace voxreg
