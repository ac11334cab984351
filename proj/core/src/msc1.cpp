#include <bit>
#include <cstring>
#include <fstream>

#include "sefnet/data.hpp"

namespace sefnet::data {

static_assert(std::endian::native == std::endian::little,
              "MSC1 payloads are little-endian; big-endian hosts unsupported");

// MSC1 container: magic "MSC1", u8 version (=1), u32 record count, then per
// record u16 height, u16 width, u8 label, u8 mode, u32 source index and
// height*width little-endian f32 pixels, row-major.
namespace {
constexpr char kMagic[4] = {'M', 'S', 'C', '1'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderLen = 9;
constexpr std::size_t kRecordHeaderLen = 10;
}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("msc1: cannot open " + path + " for writing");
  f.write(kMagic, 4);
  f.write(reinterpret_cast<const char*>(&kVersion), 1);
  const std::uint32_t count = static_cast<std::uint32_t>(ds.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& s : ds) {
    const std::uint16_t h = static_cast<std::uint16_t>(s.image.dim(0));
    const std::uint16_t w = static_cast<std::uint16_t>(s.image.dim(1));
    f.write(reinterpret_cast<const char*>(&h), 2);
    f.write(reinterpret_cast<const char*>(&w), 2);
    f.write(reinterpret_cast<const char*>(&s.label), 1);
    f.write(reinterpret_cast<const char*>(&s.mode), 1);
    f.write(reinterpret_cast<const char*>(&s.source_index), 4);
    f.write(reinterpret_cast<const char*>(s.image.ptr()),
            static_cast<std::streamsize>(sizeof(float) * s.image.size()));
  }
  if (!f) throw DataError("msc1: write failed for " + path);
}

namespace {

void read_exact(std::ifstream& f, void* dst, std::size_t len, const std::string& path,
                const char* what) {
  f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(len));
  if (!f) throw DataError(std::string("msc1: truncated ") + what + " in " + path);
}

std::uint32_t read_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  read_exact(f, magic, 4, path, "header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("msc1: bad magic in " + path);
  std::uint8_t version;
  read_exact(f, &version, 1, path, "header");
  if (version != kVersion)
    throw DataError("msc1: unsupported version " + std::to_string(version) + " in " + path);
  std::uint32_t count;
  read_exact(f, &count, 4, path, "header");
  return count;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("msc1: cannot open " + path);
  const std::uint32_t count = read_header(f, path);
  Dataset ds;
  ds.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t h, w;
    ScaledSample s;
    read_exact(f, &h, 2, path, "record header");
    read_exact(f, &w, 2, path, "record header");
    read_exact(f, &s.label, 1, path, "record header");
    read_exact(f, &s.mode, 1, path, "record header");
    read_exact(f, &s.source_index, 4, path, "record header");
    if (h < 1 || w < 1) throw DataError("msc1: invalid record extents in " + path);
    s.resolution = h;
    s.image = Tensor<float>(Shape{static_cast<int>(h), static_cast<int>(w)});
    read_exact(f, s.image.ptr(), sizeof(float) * s.image.size(), path, "record payload");
    ds.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::uint64_t> scan_dataset_offsets(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("msc1: cannot open " + path);
  const std::uint32_t count = read_header(f, path);
  std::vector<std::uint64_t> offsets;
  offsets.reserve(count);
  std::uint64_t off = kHeaderLen;
  for (std::uint32_t i = 0; i < count; ++i) {
    offsets.push_back(off);
    f.seekg(static_cast<std::streamoff>(off));
    std::uint16_t h, w;
    read_exact(f, &h, 2, path, "record header");
    read_exact(f, &w, 2, path, "record header");
    off += kRecordHeaderLen + sizeof(float) * static_cast<std::uint64_t>(h) * w;
  }
  return offsets;
}

}  // namespace sefnet::data
