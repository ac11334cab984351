#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "sefnet/data.hpp"

namespace sefnet::data {

namespace {

std::string digest_to_hex(const unsigned char* md, unsigned len) {
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
  return os.str();
}

}  // namespace

std::string sha256_hex_bytes(const void* data, std::size_t len) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned md_len = 0;
  if (!EVP_Digest(data, len, md, &md_len, EVP_sha256(), nullptr))
    throw DataError("sha256: digest failed");
  return digest_to_hex(md, md_len);
}

std::string sha256_hex_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("sha256: cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || !EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr)) {
    EVP_MD_CTX_free(ctx);
    throw DataError("sha256: init failed");
  }
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    const std::streamsize n = f.gcount();
    if (n > 0 && !EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(n))) {
      EVP_MD_CTX_free(ctx);
      throw DataError("sha256: update failed");
    }
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned md_len = 0;
  const bool ok = EVP_DigestFinal_ex(ctx, md, &md_len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw DataError("sha256: final failed");
  return digest_to_hex(md, md_len);
}

nlohmann::json DatasetManifest::to_json() const {
  return {{"seed", seed},
          {"scales", scales},
          {"mode", mode},
          {"sigma_scale", sigma_scale},
          {"split_sizes", split_sizes},
          {"source_digests", source_digests}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.scales = j.at("scales").get<std::vector<int>>();
  m.mode = j.at("mode").get<std::string>();
  m.sigma_scale = j.at("sigma_scale").get<double>();
  m.split_sizes = j.at("split_sizes").get<std::map<std::string, std::uint32_t>>();
  m.source_digests = j.at("source_digests").get<std::map<std::string, std::string>>();
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("manifest: cannot open " + path + " for writing");
  f << to_json().dump(2) << "\n";
  if (!f) throw DataError("manifest: write failed for " + path);
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("manifest: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return from_json(j);
}

}  // namespace sefnet::data
