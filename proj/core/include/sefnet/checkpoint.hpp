#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "sefnet/autodiff.hpp"

namespace sefnet {

static_assert(std::endian::native == std::endian::little,
              "SEFW1 payloads are little-endian; big-endian hosts unsupported");

// Checkpoint format SEFW1: magic "SEFW", u32 version, u32 metadata length,
// metadata JSON (parameter names, shapes, scalar width, optional extras),
// then parameter payloads as little-endian scalar arrays in declaration
// order.
inline constexpr char kSefwMagic[4] = {'S', 'E', 'F', 'W'};
inline constexpr std::uint32_t kSefwVersion = 1;

template <RealScalar Real>
void save_checkpoint(const ad::ParamStore<Real>& store, const std::string& path,
                     int scalar_width = static_cast<int>(sizeof(Real)),
                     const nlohmann::json& extra = nlohmann::json::object()) {
  if (scalar_width != 4 && scalar_width != 8)
    throw DataError("checkpoint: scalar width must be 4 or 8");
  nlohmann::json meta;
  meta["scalar_width"] = scalar_width;
  auto params = nlohmann::json::array();
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto& e = store.entry(static_cast<int>(i));
    params.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  }
  meta["params"] = params;
  if (!extra.empty()) meta["extra"] = extra;
  const std::string meta_str = meta.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
  f.write(kSefwMagic, 4);
  const std::uint32_t ver = kSefwVersion;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  const std::uint32_t mlen = static_cast<std::uint32_t>(meta_str.size());
  f.write(reinterpret_cast<const char*>(&mlen), 4);
  f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto& v = store.entry(static_cast<int>(i)).value;
    if (scalar_width == 8) {
      for (Real x : v.data()) {
        const double d = static_cast<double>(x);
        f.write(reinterpret_cast<const char*>(&d), 8);
      }
    } else {
      for (Real x : v.data()) {
        const float d = static_cast<float>(x);
        f.write(reinterpret_cast<const char*>(&d), 4);
      }
    }
  }
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

struct CheckpointMeta {
  int scalar_width = 8;
  std::vector<std::pair<std::string, Shape>> params;
  nlohmann::json extra;
};

inline CheckpointMeta read_checkpoint_meta(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kSefwMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  std::uint32_t ver = 0, mlen = 0;
  f.read(reinterpret_cast<char*>(&ver), 4);
  if (!f || ver != kSefwVersion)
    throw DataError("checkpoint: unsupported version in " + path);
  f.read(reinterpret_cast<char*>(&mlen), 4);
  std::string meta_str(mlen, '\0');
  f.read(meta_str.data(), mlen);
  if (!f) throw DataError("checkpoint: truncated metadata in " + path);
  nlohmann::json meta = nlohmann::json::parse(meta_str);
  CheckpointMeta out;
  out.scalar_width = meta.at("scalar_width").get<int>();
  for (const auto& p : meta.at("params"))
    out.params.push_back({p.at("name").get<std::string>(), p.at("shape").get<Shape>()});
  if (meta.contains("extra")) out.extra = meta["extra"];
  return out;
}

inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  return read_checkpoint_meta(f, path);
}

/// Loads values into an existing store; parameter names and shapes must match
/// the metadata. Payload scalars are cast to Real as needed.
template <RealScalar Real>
void load_checkpoint(ad::ParamStore<Real>& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  const CheckpointMeta meta = read_checkpoint_meta(f, path);
  if (meta.params.size() != store.count())
    throw DataError("checkpoint: parameter count mismatch in " + path);
  for (std::size_t i = 0; i < meta.params.size(); ++i) {
    auto& e = store.entry(static_cast<int>(i));
    if (e.name != meta.params[i].first || e.value.shape() != meta.params[i].second)
      throw DataError("checkpoint: parameter layout mismatch at " + meta.params[i].first);
    for (auto& x : e.value.data()) {
      if (meta.scalar_width == 8) {
        double d;
        f.read(reinterpret_cast<char*>(&d), 8);
        x = static_cast<Real>(d);
      } else {
        float d;
        f.read(reinterpret_cast<char*>(&d), 4);
        x = static_cast<Real>(d);
      }
    }
    if (!f) throw DataError("checkpoint: truncated payload in " + path);
  }
  store.touch();
}

}  // namespace sefnet
