#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "cfgmoe/autoencoder.hpp"
#include "cfgmoe/moe.hpp"

namespace cfgmoe {

// JSON documents holding parameter tensors as {"shape": [...], "data": [...]}.
// Doubles are written in shortest round-trip form, so save/load is lossless.

std::string format_autoencoder(const AutoencoderParams& params);
AutoencoderParams parse_autoencoder(std::string_view text, const std::string& source = "<autoencoder>");
void save_autoencoder(const AutoencoderParams& params, const std::filesystem::path& path);
AutoencoderParams load_autoencoder(const std::filesystem::path& path);

std::string format_model(const MoeModel& model);
MoeModel parse_model(std::string_view text, const std::string& source = "<model>");
void save_model(const MoeModel& model, const std::filesystem::path& path);
MoeModel load_model(const std::filesystem::path& path);

}  // namespace cfgmoe
