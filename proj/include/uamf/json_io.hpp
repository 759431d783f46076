#pragma once

#include "json.hpp"

#include "uamf/events.hpp"
#include "uamf/model.hpp"

namespace uamf {

// Strict readers: unknown keys raise ConfigError, missing keys keep the value
// from `base`.

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

nlohmann::json to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j, const GeneratorConfig& base = {});

/// Rejects any key of `j` not listed in `allowed`; `section` names the object in the message.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                        const std::string& section);

/// 64-bit FNV-1a over the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

} // namespace uamf
