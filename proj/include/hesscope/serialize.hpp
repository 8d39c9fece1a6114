#pragma once

// JSON forms of the library's configuration structs. Readers reject unknown keys and
// fill in defaults for missing ones; every error is a ConfigError.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "hesscope/models.hpp"
#include "hesscope/trainer.hpp"

namespace hesscope {

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

namespace json_util {

/// Throws ConfigError naming `where` if j is not an object or has keys outside `allowed`.
void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

/// j[key] converted to T, or fallback when absent.
template <typename T>
T get_or(const nlohmann::json& j, const char* key, const T& fallback, const std::string& where);

/// Value rounded to 9 significant digits, so dumps are short and stable.
double round9(double x);

}  // namespace json_util

}  // namespace hesscope
