#pragma once

#include "voxreg/metrics.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

struct SynthSpec {
  Dims3 dims = {48, 48, 48};
  int blobs = 12;
  double amplitude = 3.0;      // mean displacement norm, voxels
  double smoothness = 8.0;     // Gaussian scale sigma, voxels
  double texture = 0.3;      // background texture contrast relative to blobs
  double texture_sigma = 4.0;  // texture correlation length, voxels; kept larger
                               // than typical displacements so the similarity
                               // term retains a long-range basin of attraction
  uint64_t seed = 0;

  void validate() const {
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw DataError("SynthSpec: bad dims");
    if (blobs < 0) throw DataError("SynthSpec: blobs must be >= 0");
    if (amplitude < 0) throw DataError("SynthSpec: amplitude must be >= 0");
    if (smoothness <= 0) throw DataError("SynthSpec: smoothness must be > 0");
    if (texture < 0) throw DataError("SynthSpec: texture must be >= 0");
    if (texture_sigma <= 0) throw DataError("SynthSpec: texture_sigma must be > 0");
  }
};

namespace detail {

/// Separable Gaussian blur, truncated at 3 sigma, kernel renormalized over
/// the in-bounds taps.
inline void gaussian_blur_axis(std::vector<float>& data, Dims3 dims, int axis, double sigma) {
  const int64_t r = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  for (int64_t t = -r; t <= r; ++t)
    k[static_cast<size_t>(t + r)] = std::exp(-0.5 * (t * t) / (sigma * sigma));
  const int64_t n[3] = {dims.nx, dims.ny, dims.nz};
  const int64_t stride[3] = {1, dims.nx, dims.nx * dims.ny};
  const int64_t ax_n = n[axis], ax_s = stride[axis];
  std::vector<float> line(static_cast<size_t>(ax_n));
  const int64_t o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
  for (int64_t j = 0; j < n[o2]; ++j)
    for (int64_t i = 0; i < n[o1]; ++i) {
      const int64_t base = i * stride[o1] + j * stride[o2];
      for (int64_t t = 0; t < ax_n; ++t) line[static_cast<size_t>(t)] = data[base + t * ax_s];
      for (int64_t t = 0; t < ax_n; ++t) {
        double acc = 0, wsum = 0;
        const int64_t lo = std::max<int64_t>(0, t - r), hi = std::min(ax_n - 1, t + r);
        for (int64_t q = lo; q <= hi; ++q) {
          const double w = k[static_cast<size_t>(q - t + r)];
          acc += w * line[static_cast<size_t>(q)];
          wsum += w;
        }
        data[base + t * ax_s] = static_cast<float>(acc / wsum);
      }
    }
}

inline void gaussian_blur(std::vector<float>& data, Dims3 dims, double sigma) {
  for (int axis = 0; axis < 3; ++axis) gaussian_blur_axis(data, dims, axis, sigma);
}

}  // namespace detail

/// Sum-of-Gaussians phantom, normalized to [0,1]; labels are the argmax blob
/// where total intensity is above a small floor, 0 elsewhere.
inline std::pair<Volume, LabelVolume> make_phantom(const SynthSpec& spec) {
  spec.validate();
  std::mt19937 rng(static_cast<uint32_t>(spec.seed ^ 0x9e3779b9u));
  Volume v(spec.dims);
  LabelVolume labels(spec.dims);
  if (spec.blobs == 0) return {v, labels};
  struct Blob {
    double cx, cy, cz, sigma, amp;
  };
  std::vector<Blob> blobs;
  std::uniform_real_distribution<double> upos(0.15, 0.85);
  std::uniform_real_distribution<double> usig(0.05, 0.10);
  std::uniform_real_distribution<double> uamp(0.5, 1.0);
  const double ext = static_cast<double>(std::min({spec.dims.nx, spec.dims.ny, spec.dims.nz}));
  for (int b = 0; b < spec.blobs; ++b)
    blobs.push_back({upos(rng) * spec.dims.nx, upos(rng) * spec.dims.ny, upos(rng) * spec.dims.nz,
                     usig(rng) * ext, uamp(rng)});
  float vmax = 0.f;
  for (int64_t z = 0; z < spec.dims.nz; ++z)
    for (int64_t y = 0; y < spec.dims.ny; ++y)
      for (int64_t x = 0; x < spec.dims.nx; ++x) {
        double total = 0, best = 0;
        int best_blob = -1;
        for (size_t b = 0; b < blobs.size(); ++b) {
          const Blob& bl = blobs[b];
          const double dx = x - bl.cx, dy = y - bl.cy, dz = z - bl.cz;
          const double g = bl.amp * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz) /
                                             (bl.sigma * bl.sigma));
          total += g;
          // label only the blob core (above half its own peak) so the label
          // map stays sensitive to voxel-scale deformations
          if (g > 0.5 * bl.amp && g > best) {
            best = g;
            best_blob = static_cast<int>(b);
          }
        }
        v.at(x, y, z) = static_cast<float>(total);
        vmax = std::max(vmax, v.at(x, y, z));
        if (best_blob >= 0) labels.at(x, y, z) = static_cast<uint16_t>(best_blob + 1);
      }
  if (vmax > 0)
    for (auto& x : v.data) x /= vmax;
  if (spec.texture > 0) {
    // smoothed-noise texture over the whole volume, so local image structure
    // (and hence similarity gradient) exists between and around the blobs
    std::vector<float> tex(v.data.size());
    std::uniform_real_distribution<float> unoise(-1.f, 1.f);
    for (auto& t : tex) t = unoise(rng);
    for (int axis = 0; axis < 3; ++axis)
      detail::gaussian_blur_axis(tex, spec.dims, axis, spec.texture_sigma);
    const auto [tlo, thi] = std::minmax_element(tex.begin(), tex.end());
    const float tspan = *thi - *tlo;
    if (tspan > 0) {
      const float tmin = *tlo;
      for (size_t i = 0; i < tex.size(); ++i)
        v.data[i] += static_cast<float>(spec.texture) * (tex[i] - tmin) / tspan;
    }
    // rescale the composite back to exactly [0,1]
    const auto [vlo, vhi] = std::minmax_element(v.data.begin(), v.data.end());
    const float lo = *vlo, span = *vhi - *vlo;
    if (span > 0)
      for (auto& x : v.data) x = (x - lo) / span;
  }
  return {v, labels};
}

/// Smoothed white noise rescaled to mean vector norm `amplitude`. Folding-free
/// by construction: if any Jacobian determinant is non-positive the field is
/// regenerated at 0.8x amplitude, up to 10 tries.
inline DisplacementField make_smooth_field(const SynthSpec& spec) {
  spec.validate();
  double amp = spec.amplitude;
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::mt19937 rng(static_cast<uint32_t>(spec.seed * 1315423911u + 7u + attempt));
    DisplacementField f(spec.dims);
    if (amp == 0.0) return f;
    const int64_t n = spec.dims.numel();
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& x : f.data) x = static_cast<float>(noise(rng));
    for (int c = 0; c < 3; ++c) {
      std::vector<float> comp(f.data.begin() + c * n, f.data.begin() + (c + 1) * n);
      detail::gaussian_blur(comp, spec.dims, spec.smoothness);
      std::copy(comp.begin(), comp.end(), f.data.begin() + c * n);
    }
    double mean_norm = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double nx = f.data[i], ny = f.data[n + i], nz = f.data[2 * n + i];
      mean_norm += std::sqrt(nx * nx + ny * ny + nz * nz);
    }
    mean_norm /= static_cast<double>(n);
    if (mean_norm > 0) {
      const float scale = static_cast<float>(amp / mean_norm);
      for (auto& x : f.data) x *= scale;
    }
    if (spec.dims.nx < 3 || spec.dims.ny < 3 || spec.dims.nz < 3) return f;
    if (jacobian_fnj(f).fnj == 0.0) return f;
    amp *= 0.8;
  }
  throw NumericError("make_smooth_field: could not generate a folding-free field in 10 tries");
}

struct SynthPair {
  Volume fixed;
  Volume moving;
  DisplacementField u_true;  // pullback field: moving(p) = fixed(p + u_true(p))
  LabelVolume labels_fixed;
  LabelVolume labels_moving;
};

inline SynthPair make_pair(const SynthSpec& spec) {
  SynthPair pair;
  std::tie(pair.fixed, pair.labels_fixed) = make_phantom(spec);
  pair.u_true = make_smooth_field(spec);
  pair.moving = warp_trilinear(pair.fixed, pair.u_true);
  pair.labels_moving = warp_nearest(pair.labels_fixed, pair.u_true);
  return pair;
}

/// Fixed-point inversion v with v(p) = -u(p + v(p)); the field that undoes u
/// under backward-warping semantics. Used to score recovered fields.
inline DisplacementField invert_field(const DisplacementField& u, int iterations = 10) {
  DisplacementField v(u.dims);
  Tensor<float> ut = u.to_tensor();
  for (int it = 0; it < iterations; ++it) {
    // sample u at p + v(p), component-wise trilinear
    Tensor<float> vt = v.to_tensor();
    DisplacementField next(u.dims);
    const int64_t n = u.dims.numel();
    for (int c = 0; c < 3; ++c) {
      Tensor<float> comp({1, u.dims.nx, u.dims.ny, u.dims.nz},
                         std::vector<float>(u.data.begin() + c * n, u.data.begin() + (c + 1) * n));
      Tensor<float> sampled = kernels::warp_forward(comp, vt);
      for (int64_t i = 0; i < n; ++i) next.data[c * n + i] = -sampled.data[i];
    }
    v = std::move(next);
  }
  return v;
}

/// Mean Euclidean distance between two displacement fields, in voxels.
inline double endpoint_error(const DisplacementField& a, const DisplacementField& b) {
  require_same_dims(a.dims, b.dims, "endpoint_error");
  const int64_t n = a.dims.numel();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double dx = a.data[i] - b.data[i];
    const double dy = a.data[n + i] - b.data[n + i];
    const double dz = a.data[2 * n + i] - b.data[2 * n + i];
    acc += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return acc / static_cast<double>(n);
}

/// Mean vector norm of a field, in voxels.
inline double mean_norm(const DisplacementField& u) {
  DisplacementField zero(u.dims);
  return endpoint_error(u, zero);
}

}  // namespace voxreg
