#include "hesscope/serialize.hpp"

#include <cstdio>
#include <cstdlib>

#include "hesscope/errors.hpp"

namespace hesscope {

using nlohmann::json;

namespace json_util {

void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

template int get_or(const json&, const char*, const int&, const std::string&);
template int64_t get_or(const json&, const char*, const int64_t&, const std::string&);
template uint64_t get_or(const json&, const char*, const uint64_t&, const std::string&);
template double get_or(const json&, const char*, const double&, const std::string&);
template bool get_or(const json&, const char*, const bool&, const std::string&);
template std::string get_or(const json&, const char*, const std::string&, const std::string&);
template std::vector<int64_t> get_or(const json&, const char*, const std::vector<int64_t>&, const std::string&);
template std::vector<double> get_or(const json&, const char*, const std::vector<double>&, const std::string&);

double round9(double x) {
  if (!std::isfinite(x)) return x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

}  // namespace json_util

using json_util::get_or;

json to_json(const ModelSpec& spec) {
  return {{"architecture", to_string(spec.architecture)},
          {"channels", spec.channels},
          {"height", spec.height},
          {"width", spec.width},
          {"classes", spec.class_count},
          {"conv_channels", spec.conv_channels},
          {"hidden", spec.hidden},
          {"bn_momentum", spec.bn_momentum}};
}

ModelSpec model_spec_from_json(const json& j) {
  const std::string where = "model";
  json_util::require_keys(j, {"architecture", "channels", "height", "width", "classes", "conv_channels", "hidden",
                              "bn_momentum"},
                          where);
  const Architecture arch = architecture_from_string(get_or<std::string>(j, "architecture", "lenet_mini", where));
  const auto channels = get_or<int64_t>(j, "channels", 1, where);
  const auto height = get_or<int64_t>(j, "height", 32, where);
  const auto width = get_or<int64_t>(j, "width", 32, where);
  const int classes = get_or<int>(j, "classes", 10, where);
  ModelSpec spec = arch == Architecture::mlp          ? ModelSpec::mlp(channels, height, width, classes)
                   : arch == Architecture::lenet_mini ? ModelSpec::lenet_mini(channels, height, width, classes)
                                                      : ModelSpec::bn_cnn(channels, height, width, classes);
  spec.conv_channels = get_or(j, "conv_channels", spec.conv_channels, where);
  spec.hidden = get_or(j, "hidden", spec.hidden, where);
  spec.bn_momentum = get_or(j, "bn_momentum", spec.bn_momentum, where);
  spec.validate();
  return spec;
}

json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"lr", cfg.lr},
          {"batch_size", cfg.batch_size},
          {"optimizer", to_string(cfg.optimizer)},
          {"seed", cfg.seed},
          {"checkpoint_every", cfg.checkpoint_every},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"eps", cfg.eps}};
}

TrainConfig train_config_from_json(const json& j) {
  const std::string where = "train";
  json_util::require_keys(j, {"epochs", "lr", "batch_size", "optimizer", "seed", "checkpoint_every", "beta1", "beta2", "eps"},
                          where);
  TrainConfig cfg;
  cfg.epochs = get_or(j, "epochs", cfg.epochs, where);
  cfg.lr = get_or(j, "lr", cfg.lr, where);
  cfg.batch_size = get_or(j, "batch_size", cfg.batch_size, where);
  cfg.optimizer = optimizer_from_string(get_or<std::string>(j, "optimizer", to_string(cfg.optimizer), where));
  cfg.seed = get_or(j, "seed", cfg.seed, where);
  cfg.checkpoint_every = get_or(j, "checkpoint_every", cfg.checkpoint_every, where);
  cfg.beta1 = get_or(j, "beta1", cfg.beta1, where);
  cfg.beta2 = get_or(j, "beta2", cfg.beta2, where);
  cfg.eps = get_or(j, "eps", cfg.eps, where);
  cfg.validate();
  return cfg;
}

}  // namespace hesscope
