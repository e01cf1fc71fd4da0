#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "voxreg/network.hpp"
#include "voxreg/volume.hpp"

namespace voxreg {

// On-disk layout: <base>.raw holds the little-endian payload, <base>.json the
// sidecar {"dims":[nx,ny,nz],"dtype":"f32|u16","kind":"volume|labels|field"}.
// A field payload stores the ux block, then uy, then uz.

namespace detail {

inline std::string strip_ext(const std::string& path) {
  std::filesystem::path p(path);
  if (p.extension() == ".raw" || p.extension() == ".json") return p.replace_extension().string();
  return path;
}

inline nlohmann::json read_sidecar(const std::string& base, const std::string& want_kind,
                                   const std::string& want_dtype) {
  std::ifstream js(base + ".json");
  if (!js) throw DataError("missing sidecar header: " + base + ".json");
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad sidecar " + base + ".json: " + e.what());
  }
  if (!j.contains("dims") || j["dims"].size() != 3)
    throw DataError("sidecar " + base + ".json: needs dims=[nx,ny,nz]");
  if (j.value("kind", "") != want_kind)
    throw DataError("sidecar " + base + ".json: kind is '" + j.value("kind", "") + "', expected '" +
                    want_kind + "'");
  if (j.value("dtype", "") != want_dtype)
    throw DataError("sidecar " + base + ".json: dtype is '" + j.value("dtype", "") +
                    "', expected '" + want_dtype + "'");
  return j;
}

template <class T>
std::vector<T> read_payload(const std::string& base, int64_t count) {
  std::ifstream raw(base + ".raw", std::ios::binary);
  if (!raw) throw DataError("missing raw payload: " + base + ".raw");
  raw.seekg(0, std::ios::end);
  const int64_t bytes = static_cast<int64_t>(raw.tellg());
  if (bytes != count * static_cast<int64_t>(sizeof(T)))
    throw DataError("size mismatch in " + base + ".raw: have " + std::to_string(bytes) +
                    " bytes, header declares " + std::to_string(count * sizeof(T)));
  raw.seekg(0);
  std::vector<T> data(static_cast<size_t>(count));
  raw.read(reinterpret_cast<char*>(data.data()), bytes);
  if (!raw) throw DataError("short read from " + base + ".raw");
  return data;
}

template <class T>
void write_pair(const std::string& base, const Dims3& dims, const std::string& dtype,
                const std::string& kind, const std::vector<T>& data) {
  nlohmann::json j;
  j["dims"] = {dims.nx, dims.ny, dims.nz};
  j["dtype"] = dtype;
  j["kind"] = kind;
  std::ofstream js(base + ".json");
  if (!js) throw DataError("cannot write " + base + ".json");
  js << j.dump(2) << "\n";
  if (!js) throw DataError("write failure on " + base + ".json");
  std::ofstream raw(base + ".raw", std::ios::binary);
  if (!raw) throw DataError("cannot write " + base + ".raw");
  raw.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!raw) throw DataError("write failure on " + base + ".raw");
}

inline Dims3 dims_from_json(const nlohmann::json& j) {
  return {j["dims"][0].get<int64_t>(), j["dims"][1].get<int64_t>(), j["dims"][2].get<int64_t>()};
}

}  // namespace detail

struct LoadOptions {
  bool normalize = false;  // rescale intensities to [0,1]
};

inline Volume load_volume(const std::string& path, const LoadOptions& opt = {}) {
  const std::string base = detail::strip_ext(path);
  auto j = detail::read_sidecar(base, "volume", "f32");
  Volume v(detail::dims_from_json(j));
  v.data = detail::read_payload<float>(base, v.dims.numel());
  require_finite(v.data, ("volume " + base).c_str());
  if (opt.normalize && !v.data.empty()) {
    const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
    const float lo = *lo_it, span = *hi_it - *lo_it;
    if (span > 0)
      for (auto& x : v.data) x = (x - lo) / span;
    else
      for (auto& x : v.data) x = 0.f;
  }
  return v;
}

inline void save_volume(const Volume& v, const std::string& path) {
  detail::write_pair(detail::strip_ext(path), v.dims, "f32", "volume", v.data);
}

inline LabelVolume load_labels(const std::string& path) {
  const std::string base = detail::strip_ext(path);
  auto j = detail::read_sidecar(base, "labels", "u16");
  LabelVolume v(detail::dims_from_json(j));
  v.data = detail::read_payload<uint16_t>(base, v.dims.numel());
  return v;
}

inline void save_labels(const LabelVolume& v, const std::string& path) {
  detail::write_pair(detail::strip_ext(path), v.dims, "u16", "labels", v.data);
}

inline DisplacementField load_field(const std::string& path) {
  const std::string base = detail::strip_ext(path);
  auto j = detail::read_sidecar(base, "field", "f32");
  DisplacementField f(detail::dims_from_json(j));
  f.data = detail::read_payload<float>(base, 3 * f.dims.numel());
  require_finite(f.data, ("field " + base).c_str());
  return f;
}

inline void save_field(const DisplacementField& f, const std::string& path) {
  detail::write_pair(detail::strip_ext(path), f.dims, "f32", "field", f.data);
}

// ---- checkpoints ---------------------------------------------------------
// magic "VXRG", u32 version, u32 json length, config JSON, u32 tensor count,
// then per tensor: u32 name length, name, u32 rank, u64 dims, f32 data.

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json arch_to_json(const ArchConfig& c) {
  return nlohmann::json{{"levels", c.levels},
                        {"base_channels", c.base_channels},
                        {"channel_mult", c.channel_mult},
                        {"channel_cap", c.channel_cap},
                        {"dilation_rates", c.dilation_rates},
                        {"merge_mode", c.merge_mode},
                        {"kernel_size", c.kernel_size},
                        {"act_slope", c.act_slope},
                        {"decoder_cap", c.decoder_cap}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig c;
  c.levels = j.value("levels", c.levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.channel_mult = j.value("channel_mult", c.channel_mult);
  c.channel_cap = j.value("channel_cap", c.channel_cap);
  c.dilation_rates = j.value("dilation_rates", c.dilation_rates);
  c.merge_mode = j.value("merge_mode", c.merge_mode);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.act_slope = j.value("act_slope", c.act_slope);
  c.decoder_cap = j.value("decoder_cap", c.decoder_cap);
  return c;
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

inline void write_named_tensor(std::ostream& os, const std::string& name,
                               const Tensor<float>& t) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
  for (int64_t d : t.shape) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline std::pair<std::string, Tensor<float>> read_named_tensor(std::istream& is) {
  const uint32_t nlen = read_pod<uint32_t>(is);
  std::string name(nlen, '\0');
  is.read(name.data(), nlen);
  const uint32_t rank = read_pod<uint32_t>(is);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(read_pod<uint64_t>(is));
  Tensor<float> t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  return {std::move(name), std::move(t)};
}

}  // namespace detail

/// Optimizer state rides along as extra named tensors when present.
struct CheckpointExtra {
  std::vector<std::pair<std::string, Tensor<float>>> optimizer;
  nlohmann::json run_config;  // resolved CLI/train config, informational
};

inline void save_checkpoint(const std::string& path, const NetworkParams& params,
                            const CheckpointExtra* extra = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write("VXRG", 4);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  nlohmann::json j;
  j["arch"] = detail::arch_to_json(params.cfg);
  j["arch_hash"] = arch_hash(params.cfg);
  j["step"] = params.step;
  j["has_optimizer"] = extra && !extra->optimizer.empty();
  if (extra && !extra->run_config.is_null()) j["run_config"] = extra->run_config;
  const std::string blob = j.dump();
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(blob.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  const uint32_t nopt = extra ? static_cast<uint32_t>(extra->optimizer.size()) : 0;
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(params.tensors.size()) + nopt);
  for (const auto& [name, t] : params.tensors) detail::write_named_tensor(os, name, t);
  if (extra)
    for (const auto& [name, t] : extra->optimizer)
      detail::write_named_tensor(os, "optimizer/" + name, t);
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

inline NetworkParams load_checkpoint(const std::string& path, CheckpointExtra* extra = nullptr,
                                     const ArchConfig* expected = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "VXRG") throw DataError("not a checkpoint file: " + path);
  const uint32_t version = detail::read_pod<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t blob_len = detail::read_pod<uint32_t>(is);
  std::string blob(blob_len, '\0');
  is.read(blob.data(), blob_len);
  nlohmann::json j = nlohmann::json::parse(blob);
  NetworkParams p;
  p.cfg = detail::arch_from_json(j["arch"]);
  p.step = j.value("step", int64_t(0));
  const uint64_t stored_hash = j.value("arch_hash", uint64_t(0));
  if (stored_hash != arch_hash(p.cfg))
    throw DataError("checkpoint architecture hash mismatch in " + path);
  if (expected && arch_hash(*expected) != stored_hash)
    throw DataError("checkpoint architecture does not match the requested config");
  if (extra) extra->run_config = j.value("run_config", nlohmann::json());
  const uint32_t count = detail::read_pod<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, t] = detail::read_named_tensor(is);
    if (!is) throw DataError("truncated checkpoint: " + path);
    if (name.rfind("optimizer/", 0) == 0) {
      if (extra) extra->optimizer.emplace_back(name.substr(10), std::move(t));
    } else {
      p.tensors.emplace_back(std::move(name), std::move(t));
    }
  }
  return p;
}

}  // namespace voxreg
