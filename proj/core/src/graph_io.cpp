#include "cfgmoe/graph_io.hpp"

#include <algorithm>

#include <json.hpp>

#include "cfgmoe/csv.hpp"
#include "cfgmoe/error.hpp"

namespace cfgmoe {

namespace {

using json = nlohmann::json;

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

template <class T>
T field(const json& doc, const char* key, const std::string& source) {
  auto it = doc.find(key);
  if (it == doc.end()) throw ValidationError(source + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(source + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

Cfg parse_graph(std::string_view text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ":" + std::to_string(line_of(text, e.byte)) + ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_object()) throw ValidationError(source + ": top level must be an object");

  Cfg g;
  const json& id = doc.contains("id") ? doc["id"] : json();
  if (id.is_string()) {
    g.id = id.get<std::string>();
  } else if (id.is_number_integer()) {
    g.id = std::to_string(id.get<long long>());
  } else {
    throw ValidationError(source + ": field 'id' must be a string or integer");
  }
  g.label = field<int>(doc, "label", source);
  g.num_nodes = field<std::size_t>(doc, "num_nodes", source);

  const auto edges = field<std::vector<std::vector<long long>>>(doc, "edges", source);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].size() != 2 || edges[e][0] < 0 || edges[e][1] < 0) {
      throw ValidationError(source + ": edge " + std::to_string(e) + " must be a pair of non-negative indices");
    }
    g.edges.push_back({static_cast<std::size_t>(edges[e][0]), static_cast<std::size_t>(edges[e][1])});
  }

  const auto rows = field<std::vector<std::vector<double>>>(doc, "features", source);
  if (rows.size() != g.num_nodes) {
    throw ValidationError(source + ": " + std::to_string(rows.size()) + " feature rows for num_nodes " +
                          std::to_string(g.num_nodes));
  }
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) {
      throw ValidationError(source + ": feature row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                            " values, expected " + std::to_string(d));
    }
    data.insert(data.end(), rows[r].begin(), rows[r].end());
  }
  g.features = Tensor(Shape{rows.size(), d}, std::move(data));
  try {
    g.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return g;
}

std::string format_graph(const Cfg& g) {
  std::string out = "{\n";
  out += "  \"id\": " + json(g.id).dump() + ",\n";
  out += "  \"label\": " + std::to_string(g.label) + ",\n";
  out += "  \"num_nodes\": " + std::to_string(g.num_nodes) + ",\n";
  out += "  \"edges\": [";
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    out += e ? ", " : "";
    out += "[" + std::to_string(g.edges[e].src) + ", " + std::to_string(g.edges[e].dst) + "]";
  }
  out += "],\n  \"features\": [";
  for (std::size_t r = 0; r < g.num_nodes; ++r) {
    out += r ? ",\n    [" : "\n    [";
    for (std::size_t c = 0; c < g.features.cols(); ++c) {
      if (c) out += ", ";
      out += format_double(g.features(r, c));
    }
    out += "]";
  }
  out += g.num_nodes ? "\n  ]\n}\n" : "]\n}\n";
  return out;
}

Cfg load_graph(const std::filesystem::path& path) { return parse_graph(read_text_file(path), path.string()); }

void save_graph(const Cfg& g, const std::filesystem::path& path) {
  g.validate();
  write_text_file(path, format_graph(g));
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  const std::string text = read_text_file(manifest);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(manifest.string() + ":" + std::to_string(line_of(text, e.byte)) + ": malformed JSON");
  }
  if (!doc.is_array()) throw ValidationError(manifest.string() + ": manifest must be a JSON array");
  Dataset ds;
  const auto base = manifest.parent_path();
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& entry = doc[i];
    const std::string where = manifest.string() + ": entry " + std::to_string(i);
    if (!entry.is_object() || !entry.contains("path")) throw ValidationError(where + " lacks 'path'");
    std::filesystem::path p = entry["path"].get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ValidationError(where + ": graph file '" + p.string() + "' not found");
    Cfg g = load_graph(p);
    if (entry.contains("label") && entry["label"].get<int>() != g.label) {
      throw ValidationError(where + ": manifest label disagrees with graph file");
    }
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "graphs");
  json manifest = json::array();
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "g%05zu.json", i);
    const std::filesystem::path rel = std::filesystem::path("graphs") / name;
    save_graph(ds.graphs[i], dir / rel);
    manifest.push_back({{"path", rel.generic_string()}, {"label", ds.graphs[i].label}});
  }
  const auto path = dir / "manifest.json";
  write_text_file(path, manifest.dump(1) + "\n");
  return path;
}

}  // namespace cfgmoe
