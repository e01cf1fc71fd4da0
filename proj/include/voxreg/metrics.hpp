#pragma once

#include <map>
#include <set>

#include <json.hpp>

#include "voxreg/volume.hpp"

namespace voxreg {

struct DiceResult {
  std::map<uint16_t, double> per_label;  // labels absent from both are omitted
  double mean = 0.0;
};

/// Per-label Dice 2|A∩B| / (|A|+|B|). Labels empty in both volumes are
/// reported as absent and excluded from the mean.
inline DiceResult dice(const LabelVolume& a, const LabelVolume& b,
                       const std::set<uint16_t>& labels) {
  require_same_dims(a.dims, b.dims, "dice");
  if (labels.empty()) throw DataError("dice: empty label set");
  std::map<uint16_t, std::array<int64_t, 3>> counts;  // |A|, |B|, |A∩B|
  for (uint16_t l : labels) counts[l] = {0, 0, 0};
  const size_t n = a.data.size();
  for (size_t i = 0; i < n; ++i) {
    auto ia = counts.find(a.data[i]);
    if (ia != counts.end()) ia->second[0]++;
    auto ib = counts.find(b.data[i]);
    if (ib != counts.end()) ib->second[1]++;
    if (a.data[i] == b.data[i]) {
      auto ii = counts.find(a.data[i]);
      if (ii != counts.end()) ii->second[2]++;
    }
  }
  DiceResult r;
  double sum = 0.0;
  int64_t present = 0;
  for (const auto& [label, c] : counts) {
    if (c[0] + c[1] == 0) continue;
    const double d = 2.0 * static_cast<double>(c[2]) / static_cast<double>(c[0] + c[1]);
    r.per_label[label] = d;
    sum += d;
    ++present;
  }
  r.mean = present ? sum / static_cast<double>(present) : 0.0;
  return r;
}

/// All non-background labels occurring in either volume.
inline std::set<uint16_t> labels_present(const LabelVolume& a, const LabelVolume& b) {
  std::set<uint16_t> s;
  for (uint16_t v : a.data)
    if (v) s.insert(v);
  for (uint16_t v : b.data)
    if (v) s.insert(v);
  return s;
}

struct JacobianResult {
  double fnj = 0.0;  // fraction of interior voxels with det J <= 0
  Volume det;        // det J on the full grid; boundary voxels hold 1
};

/// J = I + ∇u with central differences on the interior. Boundary voxels are
/// excluded from the FNJ denominator.
inline JacobianResult jacobian_fnj(const DisplacementField& u) {
  const int64_t X = u.dims.nx, Y = u.dims.ny, Z = u.dims.nz;
  if (X < 3 || Y < 3 || Z < 3) throw DataError("jacobian_fnj: volume must be at least 3 per axis");
  JacobianResult r;
  r.det = Volume(u.dims);
  std::fill(r.det.data.begin(), r.det.data.end(), 1.f);
  int64_t folded = 0;
  for (int64_t z = 1; z < Z - 1; ++z)
    for (int64_t y = 1; y < Y - 1; ++y)
      for (int64_t x = 1; x < X - 1; ++x) {
        double J[3][3];
        for (int c = 0; c < 3; ++c) {
          J[c][0] = 0.5 * (u.u(c, x + 1, y, z) - u.u(c, x - 1, y, z));
          J[c][1] = 0.5 * (u.u(c, x, y + 1, z) - u.u(c, x, y - 1, z));
          J[c][2] = 0.5 * (u.u(c, x, y, z + 1) - u.u(c, x, y, z - 1));
          J[c][c] += 1.0;
        }
        const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                           J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                           J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
        r.det.at(x, y, z) = static_cast<float>(det);
        if (det <= 0.0) ++folded;
      }
  const int64_t interior = (X - 2) * (Y - 2) * (Z - 2);
  r.fnj = static_cast<double>(folded) / static_cast<double>(interior);
  return r;
}

/// Mean |u_d| per axis, in voxels.
inline std::array<double, 3> displacement_stats(const DisplacementField& u) {
  std::array<double, 3> mean = {0, 0, 0};
  const int64_t n = u.dims.numel();
  if (n == 0) return mean;
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    const float* p = u.data.data() + c * n;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(p[i]));
    mean[static_cast<size_t>(c)] = acc / static_cast<double>(n);
  }
  return mean;
}

struct MetricsReport {
  DiceResult dice;
  double fnj = 0.0;
  std::array<double, 3> mean_abs_u = {0, 0, 0};
  int64_t voxels = 0;
  double lncc_term = 0.0;  // -LNCC/|Omega|, filled when a pair is evaluated
  double reg_term = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json jd;
    for (const auto& [l, d] : dice.per_label) jd[std::to_string(l)] = d;
    return nlohmann::json{{"dice_per_label", jd},
                          {"mean_dice", dice.mean},
                          {"fnj", fnj},
                          {"mean_abs_ux", mean_abs_u[0]},
                          {"mean_abs_uy", mean_abs_u[1]},
                          {"mean_abs_uz", mean_abs_u[2]},
                          {"voxels", voxels},
                          {"lncc_term", lncc_term},
                          {"reg_term", reg_term}};
  }

  std::string to_csv_row() const {
    std::ostringstream os;
    os << "mean_dice,fnj,mean_abs_ux,mean_abs_uy,mean_abs_uz,voxels\n";
    os << dice.mean << "," << fnj << "," << mean_abs_u[0] << "," << mean_abs_u[1] << ","
       << mean_abs_u[2] << "," << voxels << "\n";
    return os.str();
  }

  std::string per_label_csv() const {
    std::ostringstream os;
    os << "label,dice\n";
    for (const auto& [l, d] : dice.per_label) os << l << "," << d << "\n";
    return os.str();
  }
};

}  // namespace voxreg
