#pragma once

// Checkpoint container:
//   8 bytes  magic "DPACKPT\0"
//   u32      format version
//   u64      header length
//   header   JSON: dtype, model config, blend state, init seed, parameter table, extras
//   blob     raw little-endian parameter data
//   u64      FNV-1a checksum of header + blob

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/autoencoder.hpp"

namespace dpa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'A', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
/// Byte offset of the version field; tests corrupt it deliberately.
inline constexpr std::size_t kCheckpointVersionOffset = 8;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"base_resolution", c.base_resolution}, {"target_resolution", c.target_resolution},
          {"bottleneck_dim", c.bottleneck_dim},   {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},       {"blocks_per_level", c.blocks_per_level},
          {"input_channels", c.input_channels}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.base_resolution = j.at("base_resolution").get<int>();
  c.target_resolution = j.at("target_resolution").get<int>();
  c.bottleneck_dim = j.at("bottleneck_dim").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.max_channels = j.at("max_channels").get<int>();
  c.blocks_per_level = j.at("blocks_per_level").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  return c;
}

template <typename Real>
constexpr const char* dtype_name() {
  return sizeof(Real) == 4 ? "f32" : "f64";
}

template <typename Real>
void save_checkpoint(const Autoencoder<Real>& model, const std::string& path, const nlohmann::json& extras = {}) {
  nlohmann::json header;
  header["dtype"] = dtype_name<Real>();
  header["config"] = to_json(model.config());
  header["blend"] = {{"level", model.blend().level}, {"alpha", model.blend().alpha}};
  header["seed"] = model.seed();
  header["params"] = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& [name, t] : model.state()) {
    const auto& s = t.shape();
    header["params"].push_back({{"name", name}, {"shape", {s[0], s[1], s[2], s[3]}}, {"offset", blob.size()}});
    const auto* bytes = reinterpret_cast<const char*>(t.data());
    blob.insert(blob.end(), bytes, bytes + t.size() * sizeof(Real));
  }
  if (!extras.is_null()) header["extras"] = extras;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::uint64_t header_len = text.size();
  std::uint64_t checksum = fnv1a(text.data(), text.size());
  checksum = fnv1a(blob.data(), blob.size(), checksum);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  if (!out) throw DataError("short write to checkpoint " + path);
}

namespace detail {
struct RawCheckpoint {
  nlohmann::json header;
  std::vector<char> blob;
};

inline RawCheckpoint read_raw_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t fixed = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("not a checkpoint file: " + path);
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + kCheckpointVersionOffset, sizeof version);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint " + path + " has format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  std::uint64_t header_len;
  std::memcpy(&header_len, bytes.data() + kCheckpointVersionOffset + sizeof version, sizeof header_len);
  if (header_len > bytes.size() - fixed - sizeof(std::uint64_t)) throw FormatError("corrupt checkpoint (header length): " + path);
  const char* body = bytes.data() + fixed;
  const std::size_t body_len = bytes.size() - fixed - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + fixed + body_len, sizeof stored);
  if (fnv1a(body, body_len) != stored) throw FormatError("corrupt checkpoint (checksum): " + path);
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(body, body + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  raw.blob.assign(body + header_len, body + body_len);
  return raw;
}
}  // namespace detail

/// Model plus whatever extra metadata was stored alongside it.
template <typename Real>
std::pair<Autoencoder<Real>, nlohmann::json> load_checkpoint_with_extras(const std::string& path) {
  auto raw = detail::read_raw_checkpoint(path);
  const auto& h = raw.header;
  try {
    if (h.at("dtype").get<std::string>() != dtype_name<Real>())
      throw FormatError("checkpoint dtype " + h.at("dtype").get<std::string>() + " does not match requested " + dtype_name<Real>());
    Autoencoder<Real> model(model_config_from_json(h.at("config")), h.at("seed").get<std::uint64_t>());
    model.restore_blend(BlendState{h.at("blend").at("level").get<int>(), h.at("blend").at("alpha").get<double>()});
    std::map<std::string, Tensor<Real>> st;
    for (const auto& p : h.at("params")) {
      const auto shape = p.at("shape").get<std::array<int, 4>>();
      Tensor<Real> t(shape);
      const auto offset = p.at("offset").get<std::size_t>();
      const std::size_t nbytes = t.size() * sizeof(Real);
      if (offset + nbytes > raw.blob.size()) throw FormatError("corrupt checkpoint (parameter data): " + path);
      std::memcpy(t.data(), raw.blob.data() + offset, nbytes);
      st.emplace(p.at("name").get<std::string>(), std::move(t));
    }
    model.load_state(st);
    return {std::move(model), h.value("extras", nlohmann::json())};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint header in " + path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path + " holds an invalid model config: " + e.what());
  }
}

template <typename Real>
Autoencoder<Real> load_checkpoint(const std::string& path) {
  return std::move(load_checkpoint_with_extras<Real>(path).first);
}

}  // namespace dpa
