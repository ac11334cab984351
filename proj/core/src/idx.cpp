#include <zlib.h>

#include <cstring>

#include "sefnet/data.hpp"

namespace sefnet::data {

namespace {

// gzread is transparent for uncompressed files, so one reader covers both
// the plain and the .gz variants of the IDX files.
std::vector<std::uint8_t> read_file_maybe_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("idx: cannot open " + path);
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw DataError("idx: decompression failed for " + path);
  return out;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size())
    throw DataError("idx: truncated header at offset " + std::to_string(off) + " in " + path);
  return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace

SourcePool load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ib = read_file_maybe_gz(images_path);
  const auto lb = read_file_maybe_gz(labels_path);

  const std::uint32_t imagic = read_be32(ib, 0, images_path);
  if (imagic != 0x00000803u)
    throw DataError("idx: bad magic 0x" + std::to_string(imagic) + " at offset 0 in " + images_path +
                    " (expected 0x803 u8 rank-3)");
  const std::uint32_t count = read_be32(ib, 4, images_path);
  const std::uint32_t rows = read_be32(ib, 8, images_path);
  const std::uint32_t cols = read_be32(ib, 12, images_path);
  const std::size_t need = 16 + static_cast<std::size_t>(count) * rows * cols;
  if (ib.size() < need)
    throw DataError("idx: truncated payload (have " + std::to_string(ib.size()) + " bytes, need " +
                    std::to_string(need) + ") in " + images_path);

  const std::uint32_t lmagic = read_be32(lb, 0, labels_path);
  if (lmagic != 0x00000801u)
    throw DataError("idx: bad magic at offset 0 in " + labels_path + " (expected 0x801 u8 rank-1)");
  const std::uint32_t lcount = read_be32(lb, 4, labels_path);
  if (lb.size() < 8 + static_cast<std::size_t>(lcount))
    throw DataError("idx: truncated payload in " + labels_path);
  if (lcount != count)
    throw DataError("idx: image/label count mismatch (" + std::to_string(count) + " vs " +
                    std::to_string(lcount) + ")");

  SourcePool pool;
  pool.name = images_path;
  pool.digest = sha256_hex_bytes(ib.data(), ib.size());
  {
    const std::string both = pool.digest + sha256_hex_bytes(lb.data(), lb.size());
    pool.digest = sha256_hex_bytes(both.data(), both.size());
  }
  pool.images.reserve(count);
  pool.labels.reserve(count);
  const int h = static_cast<int>(rows), w = static_cast<int>(cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<float> img(Shape{h, w});
    const std::uint8_t* src = ib.data() + 16 + static_cast<std::size_t>(i) * rows * cols;
    for (std::size_t p = 0; p < static_cast<std::size_t>(rows) * cols; ++p)
      img[p] = static_cast<float>(src[p]) / 255.0f;
    pool.images.push_back(std::move(img));
    pool.labels.push_back(lb[8 + i]);
  }
  return pool;
}

}  // namespace sefnet::data
