#include "dforge/config.hpp"

#include <fstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dforge::config {

json RunConfig::to_json() const {
  auto model_json = model.to_json();
  model_json.erase("seed");  // model init follows train.seed
  return {{"generator", generator.to_json()}, {"model", model_json}, {"train", train.to_json()}};
}

namespace {

void merge_layer(json& base, const json& layer, const std::string& origin) {
  if (!layer.is_object()) throw UsageError(origin + ": top level must be a JSON object");
  for (const auto& [section, values] : layer.items()) {
    if (!base.contains(section)) throw UsageError(origin + ": unknown key '" + section + "'");
    if (!values.is_object())
      throw UsageError(origin + ": key '" + section + "' must be an object");
    for (const auto& [key, v] : values.items()) {
      const auto path = section + "." + key;
      if (!base[section].contains(key)) throw UsageError(origin + ": unknown key '" + path + "'");
      const auto& old = base[section][key];
      const bool both_numbers = old.is_number() && v.is_number();
      if (!both_numbers && old.type() != v.type())
        throw UsageError(origin + ": key '" + path + "' has the wrong type (expected " +
                         old.type_name() + ", got " + v.type_name() + ")");
      base[section][key] = v;
    }
  }
}

template <typename F>
auto section(const char* name, F&& parse) {
  try {
    return parse();
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid value in '") + name + "': " + e.what());
  } catch (const UsageError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

RunConfig resolve_config(const std::optional<fs::path>& file, const json& overrides) {
  json merged = RunConfig{}.to_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw UsageError("cannot read config file " + file->string());
    json layer;
    try {
      layer = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config file " + file->string() + " is not valid JSON (byte " +
                       std::to_string(e.byte) + ")");
    }
    merge_layer(merged, layer, file->string());
  }
  merge_layer(merged, overrides, "command line");

  RunConfig rc;
  rc.generator = section("generator", [&] {
    return corpus::GeneratorConfig::from_json(merged["generator"]);
  });
  rc.train = section("train", [&] { return train::TrainConfig::from_json(merged["train"]); });
  auto model_json = merged["model"];
  model_json["seed"] = rc.train.seed;
  rc.model = section("model", [&] { return net::ModelConfig::from_json(model_json); });
  return rc;
}

}  // namespace dforge::config
