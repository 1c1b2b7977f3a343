#include "run_manifest.hpp"

#include <array>
#include <memory>

#include <openssl/evp.h>

#include "cfgmoe/csv.hpp"

namespace cfgmoe::cli {

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

void RunManifest::write(const std::filesystem::path& path) const {
  nlohmann::ordered_json doc;
  doc["tool"] = "cfgmoe";
  doc["version"] = CFGMOE_VERSION;
  doc["command"] = command;
  doc["seed"] = seed;
  doc["config"] = config;
  doc["config_sha256"] = sha256_hex(config.dump());
  doc["outputs"] = nlohmann::ordered_json::object();
  const auto base = path.parent_path();
  for (const auto& out : outputs) {
    auto rel = out.lexically_relative(base);
    if (rel.empty()) rel = out;
    doc["outputs"][rel.generic_string()] = sha256_file(out);
  }
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace cfgmoe::cli
