#include <doctest.h>

#include <random>

#include "voxreg/voxreg.hpp"

using namespace voxreg;

namespace {

LabelVolume sphere_labels(Dims3 d, double cx, double cy, double cz, double rad, uint16_t l) {
  LabelVolume v(d);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        const double dx = x - cx, dy = y - cy, dz = z - cz;
        if (dx * dx + dy * dy + dz * dz <= rad * rad) v.at(x, y, z) = l;
      }
  return v;
}

}  // namespace

TEST_CASE("dice of identical volumes is 1, disjoint volumes is 0") {
  const Dims3 d{10, 10, 10};
  auto a = sphere_labels(d, 4, 4, 4, 3, 1);
  auto same = dice(a, a, {1});
  CHECK(same.mean == doctest::Approx(1.0));
  CHECK(same.per_label.at(1) == doctest::Approx(1.0));

  LabelVolume b(d);
  for (int64_t i = 0; i < d.numel(); ++i)
    b.data[static_cast<size_t>(i)] = a.data[static_cast<size_t>(i)] ? 0 : 1;
  CHECK(dice(a, b, {1}).mean == doctest::Approx(0.0));
}

TEST_CASE("dice counts overlap exactly") {
  // A occupies x in [0,4), B occupies x in [2,6): |A|=|B|=4*Y*Z, overlap 2*Y*Z
  const Dims3 d{8, 5, 5};
  LabelVolume a(d), b(d);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) {
        if (x < 4) a.at(x, y, z) = 7;
        if (x >= 2 && x < 6) b.at(x, y, z) = 7;
      }
  auto r = dice(a, b, {7});
  CHECK(r.per_label.at(7) == doctest::Approx(0.5));
}

TEST_CASE("labels absent from both volumes are excluded from the mean") {
  const Dims3 d{6, 6, 6};
  auto a = sphere_labels(d, 3, 3, 3, 2, 2);
  auto r = dice(a, a, {2, 9});
  CHECK(r.per_label.count(9) == 0);
  CHECK(r.mean == doctest::Approx(1.0));
  CHECK_THROWS_AS(dice(a, a, {}), DataError);
}

TEST_CASE("labels_present collects non-background labels from both sides") {
  const Dims3 d{4, 4, 4};
  LabelVolume a(d), b(d);
  a.at(0, 0, 0) = 3;
  b.at(1, 1, 1) = 5;
  auto s = labels_present(a, b);
  CHECK(s == std::set<uint16_t>{3, 5});
}

TEST_CASE("zero displacement has no folds and unit determinant") {
  DisplacementField u({8, 7, 6});
  auto r = jacobian_fnj(u);
  CHECK(r.fnj == doctest::Approx(0.0));
  for (float v : r.det.data) CHECK(v == doctest::Approx(1.f));
}

TEST_CASE("a folding compression collapses every interior voxel") {
  // ux = -2x gives J = diag(-1, 1, 1), det = -1 everywhere in the interior
  const Dims3 d{7, 7, 7};
  DisplacementField u(d);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x) u.u(0, x, y, z) = -2.f * x;
  auto r = jacobian_fnj(u);
  CHECK(r.fnj == doctest::Approx(1.0));
  CHECK(r.det.at(3, 3, 3) == doctest::Approx(-1.f));
}

TEST_CASE("linear fields give det(I + A) exactly") {
  // u = A p with a small random matrix A: central differences recover A
  const Dims3 d{9, 8, 7};
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  double A[3][3];
  for (auto& row : A)
    for (auto& v : row) v = dist(rng);
  DisplacementField u(d);
  for (int64_t z = 0; z < d.nz; ++z)
    for (int64_t y = 0; y < d.ny; ++y)
      for (int64_t x = 0; x < d.nx; ++x)
        for (int c = 0; c < 3; ++c)
          u.u(c, x, y, z) = static_cast<float>(A[c][0] * x + A[c][1] * y + A[c][2] * z);
  double M[3][3];
  for (int r0 = 0; r0 < 3; ++r0)
    for (int c = 0; c < 3; ++c) M[r0][c] = A[r0][c] + (r0 == c ? 1.0 : 0.0);
  const double expected = M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) -
                          M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
                          M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
  auto r = jacobian_fnj(u);
  CHECK(r.fnj == doctest::Approx(0.0));
  for (int64_t z = 1; z < d.nz - 1; ++z)
    for (int64_t y = 1; y < d.ny - 1; ++y)
      for (int64_t x = 1; x < d.nx - 1; ++x)
        CHECK(r.det.at(x, y, z) == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("fnj is invariant to adding a constant shift") {
  const Dims3 d{8, 8, 8};
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  DisplacementField u(d);
  for (auto& v : u.data) v = dist(rng);
  auto base = jacobian_fnj(u);
  DisplacementField shifted = u;
  for (int64_t i = 0; i < d.numel(); ++i) shifted.data[static_cast<size_t>(i)] += 10.f;
  auto sh = jacobian_fnj(shifted);
  CHECK(sh.fnj == doctest::Approx(base.fnj));
  for (size_t i = 0; i < base.det.data.size(); ++i)
    CHECK(sh.det.data[i] == doctest::Approx(base.det.data[i]).epsilon(1e-5));
}

TEST_CASE("jacobian_fnj needs at least one interior voxel") {
  DisplacementField tiny({2, 5, 5});
  CHECK_THROWS_AS(jacobian_fnj(tiny), DataError);
}

TEST_CASE("displacement_stats averages |u| per axis") {
  const Dims3 d{4, 3, 2};
  DisplacementField u(d);
  const int64_t n = d.numel();
  for (int64_t i = 0; i < n; ++i) {
    u.data[static_cast<size_t>(i)] = (i % 2 == 0) ? 1.75f : -1.75f;
    u.data[static_cast<size_t>(n + i)] = 1.64f;
    u.data[static_cast<size_t>(2 * n + i)] = -1.06f;
  }
  auto s = displacement_stats(u);
  CHECK(s[0] == doctest::Approx(1.75));
  CHECK(s[1] == doctest::Approx(1.64));
  CHECK(s[2] == doctest::Approx(1.06));
}

TEST_CASE("displacement_stats matches a direct mean on random data") {
  const Dims3 d{6, 5, 7};
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> dist(-3.f, 3.f);
  DisplacementField u(d);
  for (auto& v : u.data) v = dist(rng);
  auto s = displacement_stats(u);
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    for (int64_t i = 0; i < d.numel(); ++i)
      acc += std::abs(static_cast<double>(u.data[static_cast<size_t>(c * d.numel() + i)]));
    CHECK(s[static_cast<size_t>(c)] == doctest::Approx(acc / d.numel()).epsilon(1e-12));
  }
}

TEST_CASE("metrics report serializes consistently") {
  MetricsReport rep;
  rep.dice.per_label = {{1, 0.8}, {2, 0.6}};
  rep.dice.mean = 0.7;
  rep.fnj = 0.01;
  rep.mean_abs_u = {1.75, 1.64, 1.06};
  rep.voxels = 1000;
  auto j = rep.to_json();
  CHECK(j["mean_dice"].get<double>() == doctest::Approx(0.7));
  CHECK(j["fnj"].get<double>() == doctest::Approx(0.01));
  CHECK(j["dice_per_label"]["1"].get<double>() == doctest::Approx(0.8));
  CHECK(j["mean_abs_ux"].get<double>() == doctest::Approx(1.75));
  auto csv = rep.to_csv_row();
  CHECK(csv.find("mean_dice,fnj") == 0);
  auto pl = rep.per_label_csv();
  CHECK(pl.find("label,dice\n1,0.8\n2,0.6\n") == 0);
}
