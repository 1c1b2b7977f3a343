#include "cfgmoe/model_io.hpp"

#include <json.hpp>

#include "cfgmoe/csv.hpp"
#include "cfgmoe/error.hpp"

namespace cfgmoe {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kAutoencoderFormat = "cfgmoe-autoencoder";
constexpr const char* kModelFormat = "cfgmoe-model";
constexpr int kVersion = 1;

json tensors_to_json(const ParameterMap& params) {
  json out = json::object();
  for (const auto& [name, t] : params) {
    out[name] = {{"shape", t.shape()}, {"data", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  return out;
}

ParameterMap tensors_from_json(const json& doc, const std::string& source) {
  if (!doc.is_object()) throw ValidationError(source + ": 'parameters' must be an object");
  ParameterMap params;
  for (const auto& [name, entry] : doc.items()) {
    try {
      auto shape = entry.at("shape").get<Shape>();
      auto data = entry.at("data").get<std::vector<double>>();
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      if (n != data.size()) {
        throw ShapeError(source + ": parameter '" + name + "' has " + std::to_string(data.size()) +
                         " values for shape " + shape_string(shape));
      }
      params.emplace(name, Tensor(std::move(shape), std::move(data)));
    } catch (const json::exception&) {
      throw ValidationError(source + ": parameter '" + name + "' is malformed");
    }
  }
  return params;
}

json parse_document(std::string_view text, const std::string& source, const char* format) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_object() || doc.value("format", std::string()) != format) {
    throw ValidationError(source + ": not a " + std::string(format) + " document");
  }
  if (doc.value("version", 0) != kVersion) throw ValidationError(source + ": unsupported version");
  if (!doc.contains("parameters")) throw ValidationError(source + ": missing 'parameters'");
  return doc;
}

json config_to_json(const MoeConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden", c.hidden},
          {"layers", c.layers},
          {"dropout", c.dropout},
          {"variant", std::string(to_string(c.variant))},
          {"k", c.k},
          {"temperature", c.temperature},
          {"std_mode", std::string(to_string(c.std_mode))},
          {"std_epsilon", c.std_epsilon}};
}

MoeConfig config_from_json(const json& j, const std::string& source) {
  try {
    MoeConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.variant = parse_gate_variant(j.at("variant").get<std::string>());
    c.k = j.at("k").get<std::size_t>();
    c.temperature = j.at("temperature").get<double>();
    c.std_mode = parse_std_mode(j.at("std_mode").get<std::string>());
    c.std_epsilon = j.at("std_epsilon").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(source + ": bad model config (" + e.what() + ")");
  }
}

}  // namespace

std::string format_autoencoder(const AutoencoderParams& params) {
  json doc = {{"format", kAutoencoderFormat}, {"version", kVersion}, {"parameters", tensors_to_json(params.params)}};
  return doc.dump() + "\n";
}

AutoencoderParams parse_autoencoder(std::string_view text, const std::string& source) {
  const json doc = parse_document(text, source, kAutoencoderFormat);
  AutoencoderParams p{tensors_from_json(doc["parameters"], source)};
  try {
    p.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return p;
}

void save_autoencoder(const AutoencoderParams& params, const std::filesystem::path& path) {
  write_text_file(path, format_autoencoder(params));
}

AutoencoderParams load_autoencoder(const std::filesystem::path& path) {
  return parse_autoencoder(read_text_file(path), path.string());
}

std::string format_model(const MoeModel& model) {
  json doc = {{"format", kModelFormat},
              {"version", kVersion},
              {"config", config_to_json(model.config())},
              {"parameters", tensors_to_json(model.parameters())}};
  return doc.dump() + "\n";
}

MoeModel parse_model(std::string_view text, const std::string& source) {
  const json doc = parse_document(text, source, kModelFormat);
  if (!doc.contains("config")) throw ValidationError(source + ": missing 'config'");
  try {
    return MoeModel(config_from_json(doc["config"], source), tensors_from_json(doc["parameters"], source));
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    if (what.rfind(source, 0) == 0) throw;
    throw ValidationError(source + ": " + what);
  }
}

void save_model(const MoeModel& model, const std::filesystem::path& path) { write_text_file(path, format_model(model)); }

MoeModel load_model(const std::filesystem::path& path) { return parse_model(read_text_file(path), path.string()); }

}  // namespace cfgmoe
