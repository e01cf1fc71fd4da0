#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "voxreg/voxreg.hpp"

using namespace voxreg;

namespace {

Tensor<double> rand_t(Shape s, uint32_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  return random_uniform<double>(std::move(s), lo, hi, rng);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("conv3d identity kernel reproduces the input") {
  auto x = rand_t({1, 5, 4, 3}, 11);
  Tensor<double> w({1, 1, 3, 3, 3});
  w.data[static_cast<size_t>(1 + 3 * (1 + 3 * 1))] = 1.0;  // center tap
  auto b = Tensor<double>::zeros({1});
  auto y = kernels::conv3d_forward(x, w, b, ConvSpec{1, 1, 1});
  CHECK(max_abs_diff(y, x) == doctest::Approx(0.0));
}

TEST_CASE("conv3d matches the brute-force oracle across stride/dilation/padding") {
  struct Case {
    int64_t cin, cout, k, s, d, p, X, Y, Z;
  };
  const Case cases[] = {
      {1, 1, 3, 1, 1, 1, 7, 6, 5},  {2, 3, 3, 1, 1, 1, 6, 5, 7},  {3, 2, 3, 2, 1, 1, 9, 8, 7},
      {2, 2, 3, 1, 2, 2, 9, 9, 9},  {1, 4, 1, 1, 1, 0, 5, 5, 5},  {2, 2, 3, 1, 4, 4, 11, 10, 9},
      {4, 3, 3, 2, 1, 1, 8, 8, 8},
  };
  uint32_t seed = 100;
  for (const auto& c : cases) {
    CAPTURE(c.s);
    CAPTURE(c.d);
    CAPTURE(c.p);
    auto x = rand_t({c.cin, c.X, c.Y, c.Z}, seed++);
    auto w = rand_t({c.cout, c.cin, c.k, c.k, c.k}, seed++);
    auto b = rand_t({c.cout}, seed++);
    ConvSpec cs{c.s, c.d, c.p};
    auto fast = kernels::conv3d_forward(x, w, b, cs);
    auto ref = oracle::conv3d_brute(x, w, b, c.s, c.d, c.p);
    CHECK(max_abs_diff(fast, ref) < 1e-12);
  }
}

TEST_CASE("dilated impulse response hits taps at the dilation distance") {
  // single 1 in the middle of the volume, all-ones 3^3 kernel with dilation 2:
  // the response is 1 exactly at offsets in {-2,0,2}^3 from the impulse
  const int64_t N = 9, mid = 4;
  Tensor<double> x({1, N, N, N});
  x.data[static_cast<size_t>(mid + N * (mid + N * mid))] = 1.0;
  auto w = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = kernels::conv3d_forward(x, w, b, ConvSpec{1, 2, 2});
  REQUIRE(y.shape == Shape{1, N, N, N});
  for (int64_t z = 0; z < N; ++z)
    for (int64_t yy = 0; yy < N; ++yy)
      for (int64_t xx = 0; xx < N; ++xx) {
        const bool on_tap = (std::abs(xx - mid) == 0 || std::abs(xx - mid) == 2) &&
                            (std::abs(yy - mid) == 0 || std::abs(yy - mid) == 2) &&
                            (std::abs(z - mid) == 0 || std::abs(z - mid) == 2);
        CHECK(y.data[static_cast<size_t>(xx + N * (yy + N * z))] ==
              doctest::Approx(on_tap ? 1.0 : 0.0));
      }
}

TEST_CASE("conv3d is linear in its input") {
  auto x1 = rand_t({2, 6, 5, 4}, 21);
  auto x2 = rand_t({2, 6, 5, 4}, 22);
  auto w = rand_t({3, 2, 3, 3, 3}, 23);
  auto b = Tensor<double>::zeros({3});
  ConvSpec cs{1, 1, 1};
  Tensor<double> xs = x1;
  for (size_t i = 0; i < xs.data.size(); ++i) xs.data[i] = 2.0 * x1.data[i] - 3.0 * x2.data[i];
  auto ys = kernels::conv3d_forward(xs, w, b, cs);
  auto y1 = kernels::conv3d_forward(x1, w, b, cs);
  auto y2 = kernels::conv3d_forward(x2, w, b, cs);
  for (size_t i = 0; i < ys.data.size(); ++i)
    CHECK(ys.data[i] == doctest::Approx(2.0 * y1.data[i] - 3.0 * y2.data[i]).epsilon(1e-10));
}

TEST_CASE("conv output dimension formula") {
  CHECK(conv_out_dim(48, 3, ConvSpec{1, 1, 1}) == 48);
  CHECK(conv_out_dim(48, 3, ConvSpec{2, 1, 1}) == 24);
  CHECK(conv_out_dim(47, 3, ConvSpec{2, 1, 1}) == 24);
  CHECK(conv_out_dim(48, 3, ConvSpec{1, 4, 4}) == 48);
  CHECK(conv_out_dim(5, 1, ConvSpec{1, 1, 0}) == 5);
  CHECK(conv_out_dim(5, 3, ConvSpec{1, 1, 0}) == 3);
  CHECK(same_padding(3, 1) == 1);
  CHECK(same_padding(3, 4) == 4);
}

TEST_CASE("conv3d rejects malformed arguments") {
  Tape<double> t;
  auto x = t.leaf(rand_t({2, 4, 4, 4}, 31));
  auto w_even = t.leaf(rand_t({1, 2, 2, 2, 2}, 32));
  auto w_badc = t.leaf(rand_t({1, 3, 3, 3, 3}, 33));
  auto b = t.leaf(Tensor<double>::zeros({1}));
  CHECK_THROWS_AS(conv3d(x, w_even, b, ConvSpec{1, 1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(conv3d(x, w_badc, b, ConvSpec{1, 1, 1}), std::invalid_argument);
  auto w = t.leaf(rand_t({1, 2, 3, 3, 3}, 34));
  CHECK_THROWS_AS(conv3d(x, w, b, ConvSpec{0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(conv3d(x, w, b, ConvSpec{1, 0, 1}), std::invalid_argument);
}

TEST_CASE("conv3d gradients match finite differences") {
  Tape<double> t;
  auto x = t.leaf(rand_t({2, 5, 4, 4}, 41), true);
  auto w = t.leaf(rand_t({2, 2, 3, 3, 3}, 42, -0.5, 0.5), true);
  auto b = t.leaf(rand_t({2}, 43), true);
  ConvSpec cs{2, 1, 1};
  auto build = [&](Tape<double>& tape, Var<double> xx, Var<double> ww, Var<double> bb) {
    (void)tape;
    return vsum(square(conv3d(xx, ww, bb, cs)));
  };
  auto loss = build(t, x, w, b);
  t.backward(loss);
  // central differences against a fresh tape per probe
  std::mt19937 pick(7);
  auto probe = [&](int which, size_t i, double h) {
    Tape<double> t2;
    auto xs = x.value();
    auto ws = w.value();
    auto bs = b.value();
    (which == 0 ? xs.data[i] : which == 1 ? ws.data[i] : bs.data[i]) += h;
    auto l2 = build(t2, t2.leaf(xs), t2.leaf(ws), t2.leaf(bs));
    return l2.value().data[0];
  };
  const double h = 1e-5;
  for (int which = 0; which < 3; ++which) {
    const auto& g = which == 0 ? x.grad() : which == 1 ? w.grad() : b.grad();
    for (int rep = 0; rep < 6; ++rep) {
      const size_t i = pick() % g.data.size();
      const double fd = (probe(which, i, h) - probe(which, i, -h)) / (2 * h);
      CHECK(g.data[i] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("upsample_trilinear2x doubles dims, preserves constants, sums to 8x") {
  auto c = Tensor<double>::full({2, 3, 4, 5}, 2.5);
  auto up = kernels::upsample2x_forward(c);
  REQUIRE(up.shape == Shape{2, 6, 8, 10});
  for (double v : up.data) CHECK(v == doctest::Approx(2.5));

  auto x = rand_t({1, 4, 3, 5}, 51);
  auto y = kernels::upsample2x_forward(x);
  double sx = 0, sy = 0;
  for (double v : x.data) sx += v;
  for (double v : y.data) sy += v;
  // even-index outputs copy, odd-index average with the (clamped) neighbor;
  // every sample contributes a total weight of 8 except a boundary correction,
  // so only check the copy/average structure directly instead
  const int64_t X = 4, Y = 3, Z = 5;
  auto at = [&](const Tensor<double>& t, int64_t X2, int64_t Y2, int64_t x2, int64_t y2,
                int64_t z2) { return t.data[static_cast<size_t>(x2 + X2 * (y2 + Y2 * z2))]; };
  CHECK(at(y, 2 * X, 2 * Y, 2, 4, 6) == doctest::Approx(at(x, X, Y, 1, 2, 3)));
  CHECK(at(y, 2 * X, 2 * Y, 3, 4, 6) ==
        doctest::Approx(0.5 * (at(x, X, Y, 1, 2, 3) + at(x, X, Y, 2, 2, 3))));
  CHECK(at(y, 2 * X, 2 * Y, 7, 4, 6) == doctest::Approx(at(x, X, Y, 3, 2, 3)));  // edge clamp
  (void)sx;
  (void)sy;
}

TEST_CASE("upsample_trilinear2x gradient matches finite differences") {
  Tape<double> t;
  auto x = t.leaf(rand_t({1, 3, 3, 2}, 61), true);
  auto loss = vsum(square(upsample_trilinear2x(x)));
  t.backward(loss);
  const double h = 1e-6;
  for (size_t i = 0; i < x.value().data.size(); i += 3) {
    auto probe = [&](double d) {
      Tape<double> t2;
      auto xs = x.value();
      xs.data[i] += d;
      return vsum(square(upsample_trilinear2x(t2.leaf(xs)))).value().data[0];
    };
    const double fd = (probe(h) - probe(-h)) / (2 * h);
    CHECK(x.grad().data[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("box_sum matches a direct clipped-window sum and is self-adjoint") {
  auto x = rand_t({1, 6, 5, 4}, 71);
  const int64_t r = 2;
  auto fast = kernels::boxsum3d(x, r);
  const int64_t X = 6, Y = 5, Z = 4;
  for (int64_t z = 0; z < Z; ++z)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t xx = 0; xx < X; ++xx) {
        double s = 0;
        for (int64_t qz = std::max<int64_t>(0, z - r); qz <= std::min(Z - 1, z + r); ++qz)
          for (int64_t qy = std::max<int64_t>(0, y - r); qy <= std::min(Y - 1, y + r); ++qy)
            for (int64_t qx = std::max<int64_t>(0, xx - r); qx <= std::min(X - 1, xx + r); ++qx)
              s += x.data[static_cast<size_t>(qx + X * (qy + Y * qz))];
        CHECK(fast.data[static_cast<size_t>(xx + X * (y + Y * z))] ==
              doctest::Approx(s).epsilon(1e-12));
      }
  // self-adjointness: <Bx, y> == <x, By>
  auto y2 = rand_t({1, 6, 5, 4}, 72);
  auto by = kernels::boxsum3d(y2, r);
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    lhs += fast.data[i] * y2.data[i];
    rhs += x.data[i] * by.data[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("box_sum gradient is the box sum of the upstream gradient") {
  Tape<double> t;
  auto x = t.leaf(rand_t({1, 5, 5, 5}, 81), true);
  auto weights = rand_t({1, 5, 5, 5}, 82);
  auto loss = vsum(mul(box_sum(x, 1), t.leaf(weights)));
  t.backward(loss);
  auto expected = kernels::boxsum3d(weights, 1);
  CHECK(max_abs_diff(x.grad(), expected) < 1e-12);
}
