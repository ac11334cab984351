#pragma once

#include <array>

#include "json.hpp"
#include "sefnet/layers.hpp"
#include "sefnet/resample.hpp"

namespace sefnet::data {

/// One dataset record: a real image at its native resolution plus provenance.
struct ScaledSample {
  Tensor<float> image;  // [res, res]; ideal resampling may ring outside [0,1]
  std::uint8_t label = 0;
  std::uint8_t mode = 0;  // AntiAliasMode::Kind
  std::uint16_t resolution = 0;
  std::uint32_t source_index = 0;
};

using Dataset = std::vector<ScaledSample>;

struct SourcePool {
  std::vector<Tensor<float>> images;  // [28, 28] in [0,1]
  std::vector<std::uint8_t> labels;
  std::string name;
  std::string digest;  // hex digest of the source files / generator identity
};

// ---- IDX ingestion (implemented in idx.cpp) ----------------------------------

/// Reads the standard IDX pair (optionally gzip-compressed); images scaled to
/// [0,1]. Throws DataError naming the offending offset on malformed input.
SourcePool load_idx(const std::string& images_path, const std::string& labels_path);

// ---- MSC1 container (msc1.cpp) ------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
/// Byte offset of every record, derived by walking the fixed-size record
/// headers (streaming reads need no payload decoding).
std::vector<std::uint64_t> scan_dataset_offsets(const std::string& path);

// ---- digests / manifest (manifest.cpp) ----------------------------------------

std::string sha256_hex_bytes(const void* data, std::size_t len);
std::string sha256_hex_file(const std::string& path);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<int> scales;
  std::string mode;  // "ideal" | "gaussian"
  double sigma_scale = 0.5;
  std::map<std::string, std::uint32_t> split_sizes;
  std::map<std::string, std::string> source_digests;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

// ---- synthetic glyph source (glyphs.cpp) ---------------------------------------

/// Deterministic 10-class procedural digit images (28x28), used when the
/// real IDX files are not available. Labels cycle 0..9 before shuffling.
SourcePool synthetic_digits(int count, std::uint64_t seed);

// ---- MNIST-scale generation -----------------------------------------------------

struct BuildCounts {
  int train = 2000, val = 500, test = 2000;
};

struct BuildResult {
  Dataset train, val, test;
  DatasetManifest manifest;
};

namespace detail {

inline Tensor<float> resample_to(const Tensor<float>& img, int target, const AntiAliasMode& mode) {
  const int n = img.shape().back();
  if (target == n) return img;  // bit-exact passthrough
  if (target > n) throw ShapeError("build_mnist_scale: resolution exceeds source");
  const Tensor<double> src = cast_tensor<float, double>(img);
  const Tensor<double> out = mode.is_ideal() ? fourier_resample2(src, target)
                                             : gaussian_downsample2(src, target, mode);
  return cast_tensor<double, float>(out);
}

/// Balanced-to-within-one, seeded resolution assignment for `count` samples.
inline std::vector<int> resolution_assignment(int count, const ScaleSet& scales, Rng& rng) {
  std::vector<int> res(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    res[static_cast<std::size_t>(i)] = scales.entries[static_cast<std::size_t>(i) % scales.entries.size()];
  std::shuffle(res.begin(), res.end(), rng);
  return res;
}

inline Dataset make_split(const SourcePool& pool, const std::vector<std::uint32_t>& src_indices,
                          const ScaleSet& scales, const AntiAliasMode& mode, Rng& rng) {
  const auto res = resolution_assignment(static_cast<int>(src_indices.size()), scales, rng);
  Dataset out;
  out.reserve(src_indices.size());
  for (std::size_t i = 0; i < src_indices.size(); ++i) {
    const std::uint32_t si = src_indices[i];
    ScaledSample s;
    s.image = resample_to(pool.images.at(si), res[i], mode);
    s.label = pool.labels.at(si);
    s.mode = static_cast<std::uint8_t>(mode.kind);
    s.resolution = static_cast<std::uint16_t>(res[i]);
    s.source_index = si;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Deterministic MNIST-scale dataset: a seeded permutation selects sources,
/// a seeded balanced assignment picks each sample's target resolution, and
/// each image is ideally (or gaussian-) downsampled from 28 to its target.
inline BuildResult build_mnist_scale(const SourcePool& train_pool, const SourcePool& test_pool,
                                     std::uint64_t seed, const ScaleSet& scales,
                                     const AntiAliasMode& mode, const BuildCounts& counts) {
  if (scales.max_res() > 28) throw ShapeError("build_mnist_scale: resolution > 28 unsupported");
  const bool separate_test = !test_pool.images.empty();
  const int from_train = counts.train + counts.val + (separate_test ? 0 : counts.test);
  if (from_train > static_cast<int>(train_pool.images.size()))
    throw DataError("build_mnist_scale: split counts exhaust the source pool");
  if (separate_test && counts.test > static_cast<int>(test_pool.images.size()))
    throw DataError("build_mnist_scale: test count exhausts the test pool");

  Rng rng(seed);
  std::vector<std::uint32_t> perm(train_pool.images.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
  std::shuffle(perm.begin(), perm.end(), rng);

  BuildResult out;
  std::vector<std::uint32_t> tr(perm.begin(), perm.begin() + counts.train);
  std::vector<std::uint32_t> va(perm.begin() + counts.train, perm.begin() + counts.train + counts.val);
  out.train = detail::make_split(train_pool, tr, scales, mode, rng);
  out.val = detail::make_split(train_pool, va, scales, mode, rng);
  if (separate_test) {
    std::vector<std::uint32_t> perm_t(test_pool.images.size());
    for (std::size_t i = 0; i < perm_t.size(); ++i) perm_t[i] = static_cast<std::uint32_t>(i);
    std::shuffle(perm_t.begin(), perm_t.end(), rng);
    std::vector<std::uint32_t> te(perm_t.begin(), perm_t.begin() + counts.test);
    out.test = detail::make_split(test_pool, te, scales, mode, rng);
  } else {
    std::vector<std::uint32_t> te(perm.begin() + counts.train + counts.val,
                                  perm.begin() + from_train);
    out.test = detail::make_split(train_pool, te, scales, mode, rng);
  }

  out.manifest.seed = seed;
  out.manifest.scales = scales.entries;
  out.manifest.mode = mode.is_ideal() ? "ideal" : "gaussian";
  out.manifest.sigma_scale = mode.sigma_scale;
  out.manifest.split_sizes = {{"train", static_cast<std::uint32_t>(out.train.size())},
                              {"val", static_cast<std::uint32_t>(out.val.size())},
                              {"test", static_cast<std::uint32_t>(out.test.size())}};
  out.manifest.source_digests[train_pool.name] = train_pool.digest;
  if (separate_test) out.manifest.source_digests[test_pool.name] = test_pool.digest;
  return out;
}

inline std::map<int, int> resolution_histogram(const Dataset& ds) {
  std::map<int, int> h;
  for (const auto& s : ds) ++h[s.resolution];
  return h;
}

}  // namespace sefnet::data
