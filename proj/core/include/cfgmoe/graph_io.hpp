#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "cfgmoe/cfg.hpp"

namespace cfgmoe {

/// Graph file: {"id", "label", "num_nodes", "edges": [[src, dst], ...],
/// "features": [[d values], ...]}.
Cfg parse_graph(std::string_view json_text, const std::string& source = "<graph>");
std::string format_graph(const Cfg& g);

Cfg load_graph(const std::filesystem::path& path);
void save_graph(const Cfg& g, const std::filesystem::path& path);

/// Dataset manifest: JSON array of {"path", "label"}; relative paths are
/// resolved against the manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Writes one graph file per entry into `dir` plus `dir/manifest.json`, and
/// returns the manifest path.
std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir);

}  // namespace cfgmoe
