#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cfgmoe::cli {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Record of one CLI invocation: effective configuration and its hash, the
/// seed, and a content hash for every file written.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> outputs;

  void write(const std::filesystem::path& path) const;
};

}  // namespace cfgmoe::cli
