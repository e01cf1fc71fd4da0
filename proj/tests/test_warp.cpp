#include <doctest.h>

#include <random>

#include "voxreg/voxreg.hpp"

using namespace voxreg;

namespace {

Volume ramp_volume(Dims3 d, float ax, float ay, float az, float c0 = 0.f) {
  Volume v(d);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) v.at(x, y, z) = c0 + ax * x + ay * y + az * z;
  return v;
}

Volume random_volume(Dims3 d, uint32_t seed) {
  Volume v(d);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(0.f, 1.f);
  for (auto& x : v.data) x = dist(rng);
  return v;
}

DisplacementField random_field(Dims3 d, float amp, uint32_t seed) {
  DisplacementField f(d);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-amp, amp);
  for (auto& x : f.data) x = dist(rng);
  return f;
}

}  // namespace

TEST_CASE("zero displacement is the identity, bit-exact") {
  const Dims3 d{6, 5, 7};
  auto m = random_volume(d, 1);
  DisplacementField u(d);
  auto w = warp_trilinear(m, u);
  CHECK(w.data == m.data);
}

TEST_CASE("half-voxel shift of a linear ramp interpolates exactly") {
  const Dims3 d{8, 6, 5};
  auto m = ramp_volume(d, 1.f, 10.f, 100.f);
  DisplacementField u(d);
  for (int64_t i = 0; i < d.numel(); ++i) u.data[static_cast<size_t>(i)] = 0.5f;  // ux only
  auto w = warp_trilinear(m, u);
  // interior: w(x,y,z) = m(x+0.5,y,z) = ramp + 0.5; the last x-plane samples
  // outside the grid and clamps back to the edge value
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const float expected = x + 1 < d.nx ? m.at(x, y, z) + 0.5f : m.at(x, y, z);
        CHECK(w.at(x, y, z) == doctest::Approx(expected).epsilon(1e-6));
      }
}

TEST_CASE("sampling far outside the volume clamps to the boundary value") {
  const Dims3 d{4, 4, 4};
  auto m = random_volume(d, 2);
  DisplacementField u(d);
  for (int64_t i = 0; i < d.numel(); ++i) {
    u.data[static_cast<size_t>(i)] = -50.f;                       // ux
    u.data[static_cast<size_t>(d.numel() + i)] = 50.f;            // uy
    u.data[static_cast<size_t>(2 * d.numel() + i)] = 50.f;        // uz
  }
  auto w = warp_trilinear(m, u);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x)
        CHECK(w.at(x, y, z) == doctest::Approx(m.at(0, d.ny - 1, d.nz - 1)));
}

TEST_CASE("warped values stay inside the local convex hull of samples") {
  // trilinear interpolation can never exceed the min/max of the volume
  const Dims3 d{7, 6, 5};
  auto m = random_volume(d, 3);
  float lo = 1e9f, hi = -1e9f;
  for (float v : m.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (uint32_t seed = 0; seed < 20; ++seed) {
    auto u = random_field(d, 3.f, 1000 + seed);
    auto w = warp_trilinear(m, u);
    for (float v : w.data) {
      CHECK(v >= lo - 1e-6f);
      CHECK(v <= hi + 1e-6f);
    }
  }
}

TEST_CASE("integer shifts agree with direct resampling") {
  const Dims3 d{9, 8, 7};
  auto m = random_volume(d, 4);
  DisplacementField u(d);
  for (int64_t i = 0; i < d.numel(); ++i) {
    u.data[static_cast<size_t>(i)] = 2.f;
    u.data[static_cast<size_t>(d.numel() + i)] = -1.f;
  }
  auto w = warp_trilinear(m, u);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const int64_t sx = std::clamp<int64_t>(x + 2, 0, d.nx - 1);
        const int64_t sy = std::clamp<int64_t>(y - 1, 0, d.ny - 1);
        CHECK(w.at(x, y, z) == doctest::Approx(m.at(sx, sy, z)));
      }
}

TEST_CASE("nearest-neighbour warp shifts labels and rounds half away from zero") {
  const Dims3 d{6, 5, 4};
  LabelVolume lab(d);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x)
        lab.at(x, y, z) = static_cast<uint16_t>((x + y + z) % 3);
  DisplacementField u(d);
  for (int64_t i = 0; i < d.numel(); ++i) u.data[static_cast<size_t>(i)] = 1.5f;  // ux
  auto w = warp_nearest(lab, u);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const int64_t sx = std::clamp<int64_t>(x + 2, 0, d.nx - 1);  // 1.5 rounds up
        CHECK(w.at(x, y, z) == lab.at(sx, y, z));
      }
}

TEST_CASE("gradient with respect to the moving image matches finite differences") {
  const Dims3 d{5, 4, 4};
  auto m = random_volume(d, 5);
  auto u = random_field(d, 0.45f, 6);  // keep sample points off the lattice
  auto wsum = [&](const Volume& mv) {
    Tape<float> t;
    auto s = vsum(warp(t.leaf(mv.to_tensor()), t.leaf(u.to_tensor())));
    return s.value().data[0];
  };
  Tape<float> t;
  auto vm = t.leaf(m.to_tensor(), true);
  auto loss = vsum(warp(vm, t.leaf(u.to_tensor())));
  t.backward(loss);
  const float h = 1e-2f;
  for (size_t i = 0; i < m.data.size(); i += 7) {
    Volume mp = m, mn = m;
    mp.data[i] += h;
    mn.data[i] -= h;
    const float fd = (wsum(mp) - wsum(mn)) / (2 * h);
    CHECK(vm.grad().data[i] == doctest::Approx(fd).epsilon(2e-3));
  }
}

TEST_CASE("gradient with respect to the displacement matches finite differences") {
  const Dims3 d{5, 5, 4};
  auto m = random_volume(d, 7);
  auto u = random_field(d, 0.4f, 8);
  // nudge offsets away from the lattice so finite differences stay one-sided
  for (auto& v : u.data)
    if (std::abs(v - std::round(v)) < 0.05f) v += 0.1f;
  auto wsum = [&](const DisplacementField& uf) {
    Tape<float> t;
    auto s = vsum(warp(t.leaf(m.to_tensor()), t.leaf(uf.to_tensor())));
    return s.value().data[0];
  };
  Tape<float> t;
  auto vu = t.leaf(u.to_tensor(), true);
  auto loss = vsum(warp(t.leaf(m.to_tensor()), vu));
  t.backward(loss);
  const float h = 1e-2f;
  for (size_t i = 0; i < u.data.size(); i += 11) {
    DisplacementField up = u, un = u;
    up.data[i] += h;
    un.data[i] -= h;
    const float fd = (wsum(up) - wsum(un)) / (2 * h);
    CHECK(vu.grad().data[i] == doctest::Approx(fd).epsilon(2e-3).scale(1.0));
  }
}

TEST_CASE("constant moving image has zero displacement gradient") {
  const Dims3 d{5, 5, 5};
  auto m = Volume(d);
  for (auto& v : m.data) v = 3.25f;
  auto u = random_field(d, 0.4f, 9);
  Tape<float> t;
  auto vu = t.leaf(u.to_tensor(), true);
  auto loss = vsum(warp(t.leaf(m.to_tensor()), vu));
  t.backward(loss);
  for (float g : vu.grad().data) CHECK(g == doctest::Approx(0.f));
}

TEST_CASE("ramp image gives unit displacement gradient in the interior") {
  // m = x linearly, so d(warp)/d(ux) = 1 wherever the sample is interior
  const Dims3 d{7, 5, 5};
  auto m = ramp_volume(d, 1.f, 0.f, 0.f);
  DisplacementField u(d);
  for (int64_t i = 0; i < d.numel(); ++i) u.data[static_cast<size_t>(i)] = 0.25f;
  Tape<float> t;
  auto vu = t.leaf(u.to_tensor(), true);
  auto loss = vsum(warp(t.leaf(m.to_tensor()), vu));
  t.backward(loss);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x + 1 < d.nx; ++x)
        CHECK(vu.grad().data[static_cast<size_t>(x + d.nx * (y + d.ny * z))] ==
              doctest::Approx(1.f));
}

TEST_CASE("warp rejects mismatched dimensions") {
  auto m = random_volume({4, 4, 4}, 10);
  DisplacementField u({5, 4, 4});
  CHECK_THROWS_AS(warp_trilinear(m, u), DataError);
}
