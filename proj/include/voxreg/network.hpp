#pragma once

#include <map>
#include <sstream>

#include "voxreg/conv.hpp"
#include "voxreg/volume.hpp"

namespace voxreg {

/// Residual U-Net with a parallel dilated-convolution bottleneck.
///
/// Dataflow: stack (f,m) as 2 channels -> stem conv -> per encoder level a
/// residual block followed by a stride-2 conv -> bottleneck: one 3x3x3 branch
/// per dilation rate, merged (concat or sum) and fused by a 1x1x1 conv with a
/// residual shortcut -> decoder: trilinear 2x upsample, skip concat, 1x1x1
/// reduction, 3x3x3 conv -> two residual refinement blocks -> 3-channel conv
/// producing the displacement field in voxel units.
struct ArchConfig {
  int levels = 4;
  int base_channels = 16;
  std::vector<int> channel_mult = {1, 2, 4, 8};
  int channel_cap = 96;
  std::vector<int> dilation_rates = {1, 2, 4};
  std::string merge_mode = "concat";  // or "sum"
  int kernel_size = 3;
  double act_slope = 0.2;
  int decoder_cap = 48;  // decoder conv width cap, keeps the budget near 0.7M

  void validate() const {
    if (levels < 2) throw std::invalid_argument("ArchConfig: levels must be >= 2");
    if (base_channels < 1) throw std::invalid_argument("ArchConfig: base_channels must be >= 1");
    if (static_cast<int>(channel_mult.size()) < levels)
      throw std::invalid_argument("ArchConfig: need a channel multiplier per level");
    if (dilation_rates.empty()) throw std::invalid_argument("ArchConfig: no dilation rates");
    for (size_t i = 0; i < dilation_rates.size(); ++i) {
      if (dilation_rates[i] < 1)
        throw std::invalid_argument("ArchConfig: dilation rates must be >= 1");
      if (i > 0 && dilation_rates[i] < dilation_rates[i - 1])
        throw std::invalid_argument("ArchConfig: dilation rates must be non-decreasing");
    }
    if (merge_mode != "concat" && merge_mode != "sum")
      throw std::invalid_argument("ArchConfig: merge_mode must be concat or sum");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw std::invalid_argument("ArchConfig: kernel_size must be odd");
    if (act_slope < 0) throw std::invalid_argument("ArchConfig: act_slope must be >= 0");
    if (decoder_cap < 1) throw std::invalid_argument("ArchConfig: decoder_cap must be >= 1");
  }

  int channels(int level) const {
    return std::min(base_channels * channel_mult[static_cast<size_t>(level)], channel_cap);
  }
  int decoder_channels(int level) const { return std::min(channels(level), decoder_cap); }
  int64_t grid_divisor() const { return int64_t(1) << (levels - 1); }

  std::string canonical_string() const {
    std::ostringstream os;
    os << "levels=" << levels << ";base=" << base_channels << ";mult=";
    for (int m : channel_mult) os << m << ",";
    os << ";cap=" << channel_cap << ";dil=";
    for (int d : dilation_rates) os << d << ",";
    os << ";merge=" << merge_mode << ";k=" << kernel_size << ";slope=" << act_slope
       << ";deccap=" << decoder_cap;
    return os.str();
  }
};

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t arch_hash(const ArchConfig& cfg) { return fnv1a64(cfg.canonical_string()); }

/// Ordered, named learnable tensors plus the architecture they realize.
struct NetworkParams {
  ArchConfig cfg;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  int64_t step = 0;  // training steps applied so far

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
  }
  Tensor<float>* find(const std::string& name) {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

struct ParamBuilder {
  NetworkParams& p;
  std::mt19937& rng;

  void conv(const std::string& name, int cout, int cin, int k) {
    const double fan_in = static_cast<double>(cin) * k * k * k;
    const float bound = static_cast<float>(std::sqrt(3.0 / fan_in));
    p.tensors.emplace_back(name + ".w",
                           random_uniform<float>({cout, cin, k, k, k}, -bound, bound, rng));
    p.tensors.emplace_back(name + ".b", Tensor<float>::zeros({cout}));
  }
  // near-zero init for the flow head so the initial field is ~identity
  void flow_conv(const std::string& name, int cout, int cin, int k) {
    p.tensors.emplace_back(name + ".w",
                           random_normal<float>({cout, cin, k, k, k}, 0.f, 1e-5f, rng));
    p.tensors.emplace_back(name + ".b", Tensor<float>::zeros({cout}));
  }
};

inline int res_mid_channels(int c) { return std::max(c / 2, 1); }

inline void build_res_block(ParamBuilder& b, const std::string& name, int cin, int cout, int k) {
  const int mid = res_mid_channels(cout);
  b.conv(name + ".c1", mid, cin, k);
  b.conv(name + ".c2", cout, mid, k);
  if (cin != cout) b.conv(name + ".proj", cout, cin, 1);
}

inline int branch_channels(const ArchConfig& cfg, int cb) {
  if (cfg.merge_mode == "sum") return cb;
  return std::max(cb / static_cast<int>(cfg.dilation_rates.size()), 1);
}

}  // namespace detail

inline NetworkParams build_network(const ArchConfig& cfg, uint64_t seed) {
  cfg.validate();
  NetworkParams p;
  p.cfg = cfg;
  std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
  detail::ParamBuilder b{p, rng};
  const int k = cfg.kernel_size;

  b.conv("stem", cfg.channels(0), 2, k);
  for (int i = 0; i + 1 < cfg.levels; ++i) {
    detail::build_res_block(b, "enc" + std::to_string(i), cfg.channels(i), cfg.channels(i), k);
    b.conv("down" + std::to_string(i), cfg.channels(i + 1), cfg.channels(i), k);
  }
  const int cb = cfg.channels(cfg.levels - 1);
  const int bc = detail::branch_channels(cfg, cb);
  for (int d : cfg.dilation_rates) b.conv("bottleneck.br" + std::to_string(d), bc, cb, k);
  const int merged = cfg.merge_mode == "sum" ? bc : bc * static_cast<int>(cfg.dilation_rates.size());
  b.conv("bottleneck.fuse", cb, merged, 1);

  int up_ch = cb;
  for (int i = cfg.levels - 2; i >= 0; --i) {
    const std::string name = "dec" + std::to_string(i);
    const int dc = cfg.decoder_channels(i);
    b.conv(name + ".reduce", dc, up_ch + cfg.channels(i), 1);
    b.conv(name + ".conv", dc, dc, k);
    up_ch = dc;
  }
  detail::build_res_block(b, "refine0", up_ch, up_ch, k);
  detail::build_res_block(b, "refine1", up_ch, up_ch, k);
  b.flow_conv("final", 3, up_ch, k);
  return p;
}

/// Per-forward binding of the parameter tensors onto a tape.
class NetworkRun {
 public:
  NetworkRun(Tape<float>& tape, NetworkParams& params, bool requires_grad)
      : tape_(tape), params_(params) {
    bound_.reserve(params.tensors.size());
    for (auto& [name, t] : params.tensors)
      bound_.emplace_back(name, tape.leaf(t, requires_grad));
  }

  Var<float> get(const std::string& name) const {
    for (const auto& [n, v] : bound_)
      if (n == name) return v;
    throw std::logic_error("network parameter not found: " + name);
  }
  const std::vector<std::pair<std::string, Var<float>>>& bound() const { return bound_; }
  Tape<float>& tape() { return tape_; }
  const ArchConfig& cfg() const { return params_.cfg; }

 private:
  Tape<float>& tape_;
  NetworkParams& params_;
  std::vector<std::pair<std::string, Var<float>>> bound_;
};

namespace detail {

inline Var<float> conv_same(NetworkRun& run, const std::string& name, Var<float> x, int dilation,
                            int stride) {
  Var<float> w = run.get(name + ".w");
  Var<float> bias = run.get(name + ".b");
  ConvSpec cs;
  cs.dilation = dilation;
  cs.stride = stride;
  cs.padding = same_padding(w.value().dim(2), dilation);
  return conv3d(x, w, bias, cs);
}

inline Var<float> act(NetworkRun& run, Var<float> x) {
  return leaky_relu(x, static_cast<float>(run.cfg().act_slope));
}

inline Var<float> res_block(NetworkRun& run, const std::string& name, Var<float> x) {
  Var<float> y = conv_same(run, name + ".c1", x, 1, 1);
  y = act(run, y);
  y = conv_same(run, name + ".c2", y, 1, 1);
  Var<float> shortcut = x;
  bool has_proj = false;
  for (const auto& [n, v] : run.bound())
    if (n == name + ".proj.w") has_proj = true;
  if (has_proj) shortcut = conv_same(run, name + ".proj", x, 1, 1);
  return act(run, add(y, shortcut));
}

inline Var<float> dilated_block(NetworkRun& run, Var<float> x) {
  const ArchConfig& cfg = run.cfg();
  std::vector<Var<float>> branches;
  for (int d : cfg.dilation_rates)
    branches.push_back(act(run, conv_same(run, "bottleneck.br" + std::to_string(d), x, d, 1)));
  Var<float> merged;
  if (cfg.merge_mode == "sum") {
    merged = branches[0];
    for (size_t i = 1; i < branches.size(); ++i) merged = add(merged, branches[i]);
  } else {
    merged = concat(branches, 0);
  }
  Var<float> fused = conv_same(run, "bottleneck.fuse", merged, 1, 1);
  return act(run, add(fused, x));
}

}  // namespace detail

struct ForwardTrace {
  Tensor<float> bottleneck_input;
  Tensor<float> bottleneck_output;
};

/// f, m: (1,X,Y,Z) vars on the run's tape. Returns the (3,X,Y,Z) field.
inline Var<float> network_forward(NetworkRun& run, Var<float> f, Var<float> m,
                                  ForwardTrace* trace = nullptr) {
  const ArchConfig& cfg = run.cfg();
  for (int i = 1; i < 4; ++i) {
    if (f.value().dim(i) != m.value().dim(i))
      throw DataError("network_forward: f and m dims differ");
    if (f.value().dim(i) % cfg.grid_divisor() != 0)
      throw DataError("network_forward: dims must be divisible by " +
                      std::to_string(cfg.grid_divisor()));
  }
  Var<float> x = concat<float>({f, m}, 0);
  x = detail::act(run, detail::conv_same(run, "stem", x, 1, 1));

  std::vector<Var<float>> skips;
  for (int i = 0; i + 1 < cfg.levels; ++i) {
    x = detail::res_block(run, "enc" + std::to_string(i), x);
    skips.push_back(x);
    x = detail::act(run, detail::conv_same(run, "down" + std::to_string(i), x, 1, 2));
  }

  if (trace) trace->bottleneck_input = x.value();
  x = detail::dilated_block(run, x);
  if (trace) trace->bottleneck_output = x.value();

  for (int i = cfg.levels - 2; i >= 0; --i) {
    const std::string name = "dec" + std::to_string(i);
    x = upsample_trilinear2x(x);
    x = concat<float>({x, skips[static_cast<size_t>(i)]}, 0);
    x = detail::conv_same(run, name + ".reduce", x, 1, 1);
    x = detail::act(run, detail::conv_same(run, name + ".conv", x, 1, 1));
  }
  x = detail::res_block(run, "refine0", x);
  x = detail::res_block(run, "refine1", x);
  return detail::conv_same(run, "final", x, 1, 1);
}

/// Convenience inference: displacement field for a volume pair.
inline DisplacementField network_predict(NetworkParams& params, const Volume& f, const Volume& m) {
  require_same_dims(f.dims, m.dims, "network_predict");
  Tape<float> tape;
  NetworkRun run(tape, params, /*requires_grad=*/false);
  Var<float> vf = tape.leaf(f.to_tensor());
  Var<float> vm = tape.leaf(m.to_tensor());
  Var<float> u = network_forward(run, vf, vm);
  return DisplacementField::from_tensor(u.value());
}

/// The bottleneck dilated block applied standalone to a feature map, used to
/// probe the receptive-field enlargement from the dilation rates.
inline Tensor<float> dilated_block_apply(NetworkParams& params, const Tensor<float>& features) {
  Tape<float> tape;
  NetworkRun run(tape, params, false);
  Var<float> x = tape.leaf(features);
  return detail::dilated_block(run, x).value();
}

}  // namespace voxreg
