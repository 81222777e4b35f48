#pragma once

// Run configuration: defaults < config file < command-line flags.

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "dforge/corpus.hpp"
#include "dforge/net.hpp"
#include "dforge/trainer.hpp"

namespace dforge::config {

// Bad configuration or command line; the CLI maps it to exit code 2.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RunConfig {
  corpus::GeneratorConfig generator;
  net::ModelConfig model;
  train::TrainConfig train;

  // {"generator": {...}, "model": {...}, "train": {...}}
  nlohmann::json to_json() const;
};

// Defaults with the file (if any) and then `overrides` merged on top. Both
// layers use the to_json() layout; unknown keys and ill-typed or invalid
// values raise UsageError naming the key.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const nlohmann::json& overrides = nlohmann::json::object());

}  // namespace dforge::config
