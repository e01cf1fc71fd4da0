#pragma once

#include <algorithm>
#include <optional>

#include "voxreg/io.hpp"
#include "voxreg/loss.hpp"
#include "voxreg/network.hpp"

namespace voxreg {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 1;
  int batch = 1;  // pairs per optimizer step (gradient accumulation)
  uint64_t seed = 0;
  LossConfig loss;
  int64_t checkpoint_interval = 0;  // steps; 0 = only at the end
  std::string pair_mode = "random-pair";  // or "fixed-atlas"

  void validate() const {
    if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    loss.validate();
  }
};

struct AdamState {
  std::vector<Tensor<float>> m;  // first moments, aligned with params.tensors
  std::vector<Tensor<float>> v;  // second moments
  int64_t t = 0;

  static AdamState init(const NetworkParams& p) {
    AdamState s;
    for (const auto& [name, tensor] : p.tensors) {
      s.m.push_back(Tensor<float>::zeros(tensor.shape));
      s.v.push_back(Tensor<float>::zeros(tensor.shape));
    }
    return s;
  }
};

/// Standard bias-corrected Adam update, in place. Aborts on non-finite
/// gradients, naming the offending tensor.
inline void adam_step(NetworkParams& params, const std::vector<Tensor<float>>& grads,
                      AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size())
    throw std::invalid_argument("adam_step: gradient/state count mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t k = 0; k < params.tensors.size(); ++k) {
    auto& [name, theta] = params.tensors[k];
    const Tensor<float>& g = grads[k];
    if (!g.same_shape(theta))
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (int64_t i = 0; i < theta.numel(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      if (!std::isfinite(gi)) throw NumericError("non-finite gradient in tensor " + name);
      const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      m.data[i] = static_cast<float>(mi);
      v.data[i] = static_cast<float>(vi);
      const double update = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      const double next = static_cast<double>(theta.data[i]) - update;
      if (!std::isfinite(next)) throw NumericError("non-finite parameter in tensor " + name);
      theta.data[i] = static_cast<float>(next);
    }
  }
}

struct TrainLogEntry {
  int64_t step;
  double lncc_term;
  double reg_term;
  double total;
};

inline std::string log_to_csv(const std::vector<TrainLogEntry>& log) {
  std::ostringstream os;
  os.precision(9);
  os << "step,lncc_term,reg_term,total\n";
  for (const auto& e : log)
    os << e.step << "," << e.lncc_term << "," << e.reg_term << "," << e.total << "\n";
  return os.str();
}

struct TrainResult {
  NetworkParams params;
  AdamState adam;
  std::vector<TrainLogEntry> log;
};

using Pair = std::pair<Volume, Volume>;  // (fixed, moving)

namespace detail {

inline void check_dataset(const std::vector<Pair>& pairs, const ArchConfig& cfg) {
  if (pairs.empty()) throw DataError("train: empty dataset");
  const Dims3 d = pairs[0].first.dims;
  for (const auto& [f, m] : pairs) {
    require_same_dims(f.dims, d, "train dataset");
    require_same_dims(m.dims, d, "train dataset");
  }
  if (d.nx % cfg.grid_divisor() || d.ny % cfg.grid_divisor() || d.nz % cfg.grid_divisor())
    throw DataError("train: volume dims must be divisible by " +
                    std::to_string(cfg.grid_divisor()));
}

}  // namespace detail

/// One gradient step on one pair. Returns the loss parts; accumulates
/// gradients into `grads` (caller-zeroed for a fresh step).
inline TrainLogEntry train_step_accumulate(NetworkParams& params, const Volume& f,
                                           const Volume& m, const TrainConfig& cfg,
                                           std::vector<Tensor<float>>& grads, int64_t step) {
  Tape<float> tape;
  NetworkRun run(tape, params, /*requires_grad=*/true);
  Var<float> vf = tape.leaf(f.to_tensor());
  Var<float> vm = tape.leaf(m.to_tensor());
  Var<float> u = network_forward(run, vf, vm);
  LossParts<float> parts = total_loss(vf, vm, u, cfg.loss);
  if (!std::isfinite(static_cast<double>(parts.total.value().data[0])))
    throw NumericError("non-finite loss at step " + std::to_string(step));
  tape.backward(parts.total);
  const auto& bound = run.bound();
  for (size_t k = 0; k < bound.size(); ++k) {
    const Tensor<float>& g = bound[k].second.grad();
    if (g.shape.empty()) continue;  // parameter unused in this graph
    for (int64_t i = 0; i < g.numel(); ++i) grads[k].data[i] += g.data[i];
  }
  return {step, static_cast<double>(parts.similarity_term),
          static_cast<double>(parts.regularizer_term),
          static_cast<double>(parts.total.value().data[0])};
}

/// Empirical-risk training over a finite pair list: epochs of seeded shuffles,
/// Adam updates, per-step loss logging. Deterministic for a fixed seed.
inline TrainResult train(const std::vector<Pair>& pairs, const TrainConfig& cfg,
                         const ArchConfig& arch,
                         const std::string& checkpoint_path = "",
                         std::optional<NetworkParams> resume = std::nullopt) {
  cfg.validate();
  arch.validate();
  detail::check_dataset(pairs, arch);
  TrainResult r;
  r.params = resume ? std::move(*resume) : build_network(arch, cfg.seed);
  r.adam = AdamState::init(r.params);
  std::mt19937 order_rng(static_cast<uint32_t>(cfg.seed + 0x51ed270bu));

  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor<float>> grads;
  for (const auto& [name, t] : r.params.tensors) grads.push_back(Tensor<float>::zeros(t.shape));

  int64_t step = r.params.step;
  int in_batch = 0;
  auto zero_grads = [&] {
    for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), 0.f);
  };
  zero_grads();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.pair_mode != "fixed-atlas") std::shuffle(order.begin(), order.end(), order_rng);
    for (size_t idx : order) {
      ++step;
      TrainLogEntry e =
          train_step_accumulate(r.params, pairs[idx].first, pairs[idx].second, cfg, grads, step);
      r.log.push_back(e);
      if (++in_batch == cfg.batch) {
        if (cfg.batch > 1)
          for (auto& g : grads)
            for (auto& x : g.data) x /= static_cast<float>(cfg.batch);
        adam_step(r.params, grads, r.adam, cfg);
        zero_grads();
        in_batch = 0;
      }
      r.params.step = step;
      if (!checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
          step % cfg.checkpoint_interval == 0)
        save_checkpoint(checkpoint_path, r.params);
    }
  }
  if (in_batch > 0) {
    for (auto& g : grads)
      for (auto& x : g.data) x /= static_cast<float>(in_batch);
    adam_step(r.params, grads, r.adam, cfg);
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, r.params);
  return r;
}

struct RegisterResult {
  DisplacementField field;
  Volume warped;
};

/// Inference: one network application plus the trilinear warp.
inline RegisterResult register_pair(NetworkParams& params, const Volume& f, const Volume& m) {
  require_same_dims(f.dims, m.dims, "register");
  RegisterResult r;
  r.field = network_predict(params, f, m);
  r.warped = warp_trilinear(m, r.field);
  return r;
}

}  // namespace voxreg
