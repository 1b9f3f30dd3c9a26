#pragma once

#include <string>

#include "maf/model.hpp"

namespace maf {

/// Parses a ModelConfig JSON document. Unknown keys and type mismatches
/// raise ConfigError naming the JSON path; absent keys keep their defaults.
ModelConfig parse_model_config(const std::string& json_text);
ModelConfig load_model_config(const std::string& path);

/// Canonical JSON rendering (every field present, fixed key order).
std::string model_config_to_json(const ModelConfig& cfg, int indent = 2);

}  // namespace maf
