#pragma once

// Binary checkpoint: "ORBITCKP", u32 version, u32 header length, a JSON header
// (config, counters, tensor names/shapes, dtype), then the raw little-endian
// tensor data in header order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/errors.hpp"
#include "orbit/model.hpp"

namespace orbit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"motion_dim", c.motion_dim},
          {"input_size", c.input_size},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"velocity_cap", c.velocity_cap},
          {"init_seed", c.init_seed}};
}

/// Keys missing from `j` keep the values already in `c`; unknown keys are rejected.
inline void update_from_json(ModelConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "latent_dim") c.latent_dim = value.get<int>();
      else if (key == "motion_dim") c.motion_dim = value.get<int>();
      else if (key == "input_size") c.input_size = value.get<int>();
      else if (key == "encoder_channels") c.encoder_channels = value.get<std::vector<int>>();
      else if (key == "decoder_channels") c.decoder_channels = value.get<std::vector<int>>();
      else if (key == "velocity_cap") c.velocity_cap = value.get<double>();
      else if (key == "init_seed") c.init_seed = value.get<std::uint64_t>();
      else throw ConfigError("unknown model config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config key '" + key + "': " + e.what());
    }
  }
}

struct CheckpointMeta {
  std::int64_t step = 0;
  int epoch = 0;
  double valid_loss = 0;
  nlohmann::json extra = nlohmann::json::object();
};

template <class T>
struct Checkpoint {
  LatentModel<T> model;
  CheckpointMeta meta;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'O', 'R', 'B', 'I', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "float32" : "float64";
}

template <class T>
void put_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <class Src, class Dst>
void read_tensor(std::istream& is, std::vector<Dst>& out) {
  std::vector<Src> buf(out.size());
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Src)));
  for (std::size_t k = 0; k < buf.size(); ++k) out[k] = static_cast<Dst>(buf[k]);
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const LatentModel<T>& model, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["dtype"] = detail::dtype_name<T>();
  header["step"] = meta.step;
  header["epoch"] = meta.epoch;
  header["valid_loss"] = meta.valid_loss;
  header["extra"] = meta.extra;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& p : model.params()) tensors.push_back({{"name", p.name}, {"shape", p.shape}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
    detail::put_raw(os, detail::kCheckpointVersion);
    detail::put_raw(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.params())
      os.write(reinterpret_cast<const char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(T)));
    if (!os) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Loads into element type T; a checkpoint stored at the other precision is converted.
template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a checkpoint file");
  const auto version = detail::get_raw<std::uint32_t>(is);
  if (version != detail::kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::get_raw<std::uint32_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw DataError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  ModelConfig cfg;
  CheckpointMeta meta;
  std::vector<NamedTensor<T>> params;
  std::string dtype;
  try {
    header = nlohmann::json::parse(text);
    update_from_json(cfg, header.at("config"));
    dtype = header.at("dtype").get<std::string>();
    meta.step = header.at("step").get<std::int64_t>();
    meta.epoch = header.at("epoch").get<int>();
    meta.valid_loss = header.at("valid_loss").get<double>();
    meta.extra = header.at("extra");
    for (const auto& t : header.at("tensors")) {
      NamedTensor<T> p;
      p.name = t.at("name").get<std::string>();
      p.shape = t.at("shape").get<ad::Shape>();
      p.values.resize(ad::numel(p.shape));
      params.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  for (auto& p : params) {
    if (dtype == "float32") detail::read_tensor<float>(is, p.values);
    else if (dtype == "float64") detail::read_tensor<double>(is, p.values);
    else throw DataError("checkpoint dtype '" + dtype + "' is not supported");
  }
  if (!is) throw DataError("truncated checkpoint data in " + path.string());
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in checkpoint " + path.string());
  try {
    return {LatentModel<T>(cfg, std::move(params)), std::move(meta)};
  } catch (const ContractError& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
}

/// FNV-1a 64-bit hash of a file's bytes, as 16 hex digits.
namespace detail {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < n; ++k) {
      h ^= p[k];
      h *= 0x100000001b3ULL;
    }
  }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }
};

}  // namespace detail

inline std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  detail::Fnv1a f;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) f.add(buf, static_cast<std::size_t>(is.gcount()));
  return f.hex();
}

/// Identity of a model's weights: FNV-1a over the configuration and the float32 parameter bytes.
template <class T>
std::string model_fingerprint(const LatentModel<T>& model) {
  detail::Fnv1a f;
  const std::string cfg = to_json(model.config()).dump();
  f.add(cfg.data(), cfg.size());
  for (const auto& p : model.params()) {
    f.add(p.name.data(), p.name.size());
    for (T v : p.values) {
      const float x = static_cast<float>(v);
      f.add(&x, sizeof x);
    }
  }
  return f.hex();
}

}  // namespace orbit
