#include "hesscope/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "hesscope/serialize.hpp"

namespace hesscope {

using nlohmann::json;
using json_util::get_or;
using json_util::require_keys;

namespace {

json shift_to_json(const ShiftSpec& s) {
  json ops = json::array();
  for (const ShiftOp& op : s.ops) {
    std::visit(
        [&](const auto& o) {
          using Op = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<Op, shift::InvertContrast>) {
            ops.push_back({{"op", "invert_contrast"}});
          } else if constexpr (std::is_same_v<Op, shift::GaussianNoise>) {
            ops.push_back({{"op", "gaussian_noise"}, {"sigma", o.sigma}});
          } else if constexpr (std::is_same_v<Op, shift::ShiftPixels>) {
            ops.push_back({{"op", "shift_pixels"}, {"dx", o.dx}, {"dy", o.dy}});
          } else {
            ops.push_back({{"op", "rescale_intensity"}, {"lo", o.lo}, {"hi", o.hi}});
          }
        },
        op);
  }
  return {{"ops", ops}, {"seed", s.seed}};
}

ShiftSpec shift_from_json(const json& j, const std::string& where) {
  require_keys(j, {"ops", "seed"}, where);
  ShiftSpec s;
  s.seed = get_or<uint64_t>(j, "seed", 17, where);
  if (!j.contains("ops")) return s;
  if (!j.at("ops").is_array()) throw ConfigError(where + ".ops: expected an array");
  for (const json& op : j.at("ops")) {
    const std::string w = where + ".ops[]";
    if (!op.is_object() || !op.contains("op")) throw ConfigError(w + ": every op needs an \"op\" name");
    const std::string name = get_or<std::string>(op, "op", "", w);
    if (name == "invert_contrast") {
      require_keys(op, {"op"}, w);
      s.ops.push_back(shift::InvertContrast{});
    } else if (name == "gaussian_noise") {
      require_keys(op, {"op", "sigma"}, w);
      s.ops.push_back(shift::GaussianNoise{get_or<double>(op, "sigma", 0.3, w)});
    } else if (name == "shift_pixels") {
      require_keys(op, {"op", "dx", "dy"}, w);
      s.ops.push_back(shift::ShiftPixels{get_or<int>(op, "dx", 0, w), get_or<int>(op, "dy", 0, w)});
    } else if (name == "rescale_intensity") {
      require_keys(op, {"op", "lo", "hi"}, w);
      s.ops.push_back(shift::RescaleIntensity{get_or<double>(op, "lo", 0.0, w), get_or<double>(op, "hi", 1.0, w)});
    } else {
      throw ConfigError(w + ": unknown shift op '" + name + "'");
    }
  }
  return s;
}

json dataset_to_json(const DatasetSource& d) {
  json j{{"format", d.format == DatasetSource::Format::idx ? "idx" : "raw"},
         {"pad_to", d.pad_to},
         {"offset", d.offset},
         {"count", d.count},
         {"shift", d.shift ? shift_to_json(*d.shift) : json(nullptr)}};
  if (d.format == DatasetSource::Format::idx) {
    j["images"] = d.images;
    j["labels"] = d.labels;
  } else {
    j["path"] = d.path;
  }
  return j;
}

DatasetSource dataset_from_json(const json& j, const std::string& where) {
  require_keys(j, {"format", "images", "labels", "path", "pad_to", "offset", "count", "shift"}, where);
  DatasetSource d;
  const std::string format = get_or<std::string>(j, "format", "idx", where);
  if (format == "idx") {
    d.format = DatasetSource::Format::idx;
    d.images = get_or<std::string>(j, "images", "", where);
    d.labels = get_or<std::string>(j, "labels", "", where);
    if (d.images.empty() || d.labels.empty()) throw ConfigError(where + ": idx datasets need images and labels");
    if (j.contains("path")) throw ConfigError(where + ": 'path' belongs to raw datasets");
  } else if (format == "raw") {
    d.format = DatasetSource::Format::raw;
    d.path = get_or<std::string>(j, "path", "", where);
    if (d.path.empty()) throw ConfigError(where + ": raw datasets need a path");
    if (j.contains("images") || j.contains("labels")) throw ConfigError(where + ": images/labels belong to idx datasets");
  } else {
    throw ConfigError(where + ".format: expected idx or raw, got '" + format + "'");
  }
  d.pad_to = get_or<int64_t>(j, "pad_to", 0, where);
  d.offset = get_or<int64_t>(j, "offset", 0, where);
  d.count = get_or<int64_t>(j, "count", -1, where);
  if (d.pad_to < 0 || d.offset < 0 || d.count < -1) throw ConfigError(where + ": pad_to/offset/count out of range");
  if (j.contains("shift") && !j.at("shift").is_null()) d.shift = shift_from_json(j.at("shift"), where + ".shift");
  return d;
}

Mode mode_or(const json& j, const char* key, Mode fallback, const std::string& where) {
  const std::string name = get_or<std::string>(j, key, to_string(fallback), where);
  try {
    return mode_from_string(name);
  } catch (const Error&) {
    throw ConfigError(where + "." + key + ": expected train or eval, got '" + name + "'");
  }
}

}  // namespace

std::vector<std::string> DatasetSource::inputs() const {
  if (format == Format::idx) return {images, labels};
  return {path};
}

std::filesystem::path ExperimentConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

std::filesystem::path ExperimentConfig::command_dir(const std::string& command) const {
  return resolve(output_dir) / command;
}

json to_json(const ExperimentConfig& c) {
  const GridSpec& g = c.landscape.grid;
  const SlqConfig& s = c.hesd.slq;
  const CriteriaConfig& k = c.criteria;
  return {
      {"model", to_json(c.model)},
      {"train", to_json(c.train)},
      {"data", {{"a", dataset_to_json(c.data_a)}, {"b", c.data_b ? dataset_to_json(*c.data_b) : json(nullptr)}}},
      {"directions",
       {{"source", c.directions.source},
        {"dist", c.directions.dist},
        {"normalization", to_string(c.directions.normalization)},
        {"freeze_bn", c.directions.freeze_bn},
        {"seed", c.directions.seed}}},
      {"landscape",
       {{"range", g.range},
        {"steps", g.steps},
        {"mode", to_string(g.mode)},
        {"batch_size", c.landscape.batch_size},
        {"batch_seed", c.landscape.batch_seed},
        {"threshold", c.landscape.threshold},
        {"cap", c.landscape.cap}}},
      {"hesd",
       {{"lanczos_steps", s.lanczos_steps},
        {"n_hes", s.n_hes},
        {"seed", s.seed},
        {"sigma_factor", s.sigma_factor},
        {"grid_points", s.grid_points},
        {"mode", to_string(c.hesd.mode)},
        {"batch_count", c.hesd.batch_count},
        {"batch_size", c.hesd.batch_size},
        {"batch_seed", c.hesd.batch_seed}}},
      {"criteria",
       {{"exponents", k.exponents},
        {"zero_band", k.zero_band},
        {"exponent_placement", to_string(k.placement)},
        {"n_hes", k.n_hes},
        {"batch_count", k.batch_count},
        {"batch_size", k.batch_size},
        {"master_seed", k.master_seed},
        {"mode", to_string(c.criteria_mode)}}},
      {"checkpoint", c.checkpoint},
      {"output_dir", c.output_dir},
  };
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  require_keys(j, {"model", "train", "data", "directions", "landscape", "hesd", "criteria", "checkpoint", "output_dir"},
               "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  if (j.contains("model")) c.model = model_spec_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));

  if (!j.contains("data")) throw ConfigError("config: 'data' with at least dataset 'a' is required");
  const json& data = j.at("data");
  require_keys(data, {"a", "b"}, "data");
  if (!data.contains("a")) throw ConfigError("data: dataset 'a' is required");
  c.data_a = dataset_from_json(data.at("a"), "data.a");
  if (data.contains("b") && !data.at("b").is_null()) c.data_b = dataset_from_json(data.at("b"), "data.b");

  if (j.contains("directions")) {
    const json& d = j.at("directions");
    const std::string w = "directions";
    require_keys(d, {"source", "dist", "normalization", "freeze_bn", "seed"}, w);
    c.directions.source = get_or<std::string>(d, "source", "random", w);
    if (c.directions.source != "random" && c.directions.source != "hessian" && c.directions.source != "adam") {
      throw ConfigError("directions.source: expected random, hessian or adam, got '" + c.directions.source + "'");
    }
    c.directions.dist = get_or<std::string>(d, "dist", "gaussian", w);
    if (c.directions.dist != "gaussian" && c.directions.dist != "uniform") {
      throw ConfigError("directions.dist: expected gaussian or uniform, got '" + c.directions.dist + "'");
    }
    c.directions.normalization = norm_scheme_from_string(get_or<std::string>(d, "normalization", "filter_l2", w));
    c.directions.freeze_bn = get_or<bool>(d, "freeze_bn", false, w);
    c.directions.seed = get_or<uint64_t>(d, "seed", 0, w);
  }

  if (j.contains("landscape")) {
    const json& l = j.at("landscape");
    const std::string w = "landscape";
    require_keys(l, {"range", "steps", "mode", "batch_size", "batch_seed", "threshold", "cap"}, w);
    c.landscape.grid.range = get_or<double>(l, "range", 20.0, w);
    c.landscape.grid.steps = get_or<int>(l, "steps", 40, w);
    c.landscape.grid.mode = mode_or(l, "mode", Mode::eval, w);
    c.landscape.batch_size = get_or<int64_t>(l, "batch_size", 64, w);
    c.landscape.batch_seed = get_or<uint64_t>(l, "batch_seed", 0, w);
    c.landscape.threshold = get_or<double>(l, "threshold", kExplosionThreshold, w);
    c.landscape.cap = get_or<double>(l, "cap", 0.0, w);
  }
  c.landscape.grid.validate();
  if (c.landscape.batch_size < 1) throw ConfigError("landscape.batch_size must be >= 1");
  if (!(c.landscape.threshold > 0)) throw ConfigError("landscape.threshold must be positive");
  if (!(c.landscape.cap >= 0)) throw ConfigError("landscape.cap must be >= 0");

  if (j.contains("hesd")) {
    const json& h = j.at("hesd");
    const std::string w = "hesd";
    require_keys(h, {"lanczos_steps", "n_hes", "seed", "sigma_factor", "grid_points", "mode", "batch_count",
                     "batch_size", "batch_seed"},
                 w);
    SlqConfig& s = c.hesd.slq;
    s.lanczos_steps = get_or<int>(h, "lanczos_steps", s.lanczos_steps, w);
    s.n_hes = get_or<int>(h, "n_hes", s.n_hes, w);
    s.seed = get_or<uint64_t>(h, "seed", s.seed, w);
    s.sigma_factor = get_or<double>(h, "sigma_factor", s.sigma_factor, w);
    s.grid_points = get_or<int>(h, "grid_points", s.grid_points, w);
    c.hesd.mode = mode_or(h, "mode", Mode::eval, w);
    c.hesd.batch_count = get_or<int>(h, "batch_count", 1, w);
    c.hesd.batch_size = get_or<int64_t>(h, "batch_size", 64, w);
    c.hesd.batch_seed = get_or<uint64_t>(h, "batch_seed", 0, w);
  }
  c.hesd.slq.validate();
  if (c.hesd.batch_count < 1 || c.hesd.batch_size < 1) throw ConfigError("hesd.batch_count/batch_size must be >= 1");

  if (j.contains("criteria")) {
    const json& k = j.at("criteria");
    const std::string w = "criteria";
    require_keys(k, {"exponents", "zero_band", "exponent_placement", "n_hes", "batch_count", "batch_size", "master_seed",
                     "mode"},
                 w);
    CriteriaConfig& cc = c.criteria;
    cc.exponents = get_or<std::vector<double>>(k, "exponents", cc.exponents, w);
    cc.zero_band = get_or<double>(k, "zero_band", cc.zero_band, w);
    cc.placement = exponent_placement_from_string(get_or<std::string>(k, "exponent_placement", "per_term", w));
    cc.n_hes = get_or<int>(k, "n_hes", cc.n_hes, w);
    cc.batch_count = get_or<int>(k, "batch_count", cc.batch_count, w);
    cc.batch_size = get_or<int64_t>(k, "batch_size", cc.batch_size, w);
    cc.master_seed = get_or<uint64_t>(k, "master_seed", cc.master_seed, w);
    c.criteria_mode = mode_or(k, "mode", Mode::eval, w);
  }
  c.criteria.validate();

  c.checkpoint = get_or<std::string>(j, "checkpoint", "", "config");
  c.output_dir = get_or<std::string>(j, "output_dir", "out", "config");
  if (c.output_dir.empty()) throw ConfigError("config.output_dir must not be empty");
  c.model.validate();
  c.train.validate();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config '" + path.string() + "' is not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  ExperimentConfig cfg = experiment_config_from_json(j, path.parent_path());

  auto require_inputs = [&](const DatasetSource& d, const char* name) {
    for (const auto& f : d.inputs()) {
      if (!std::filesystem::is_regular_file(cfg.resolve(f))) {
        throw ConfigError(std::string("data.") + name + ": missing file '" + cfg.resolve(f).string() + "'");
      }
    }
  };
  require_inputs(cfg.data_a, "a");
  if (cfg.data_b) require_inputs(*cfg.data_b, "b");
  if (!cfg.checkpoint.empty() && !std::filesystem::is_regular_file(cfg.resolve(cfg.checkpoint))) {
    throw ConfigError("checkpoint '" + cfg.resolve(cfg.checkpoint).string() + "' does not exist");
  }
  return cfg;
}

Dataset load_dataset(const ExperimentConfig& cfg, const DatasetSource& src, Split split) {
  Dataset ds = src.format == DatasetSource::Format::idx
                   ? load_idx(cfg.resolve(src.images), cfg.resolve(src.labels))
                   : load_raw(cfg.resolve(src.path));
  if (src.offset > 0 || src.count >= 0) {
    const int64_t count = src.count < 0 ? ds.size() - src.offset : src.count;
    if (src.offset + count > ds.size()) {
      throw ConfigError("dataset slice [" + std::to_string(src.offset) + ", " + std::to_string(src.offset + count) +
                        ") exceeds " + std::to_string(ds.size()) + " samples");
    }
    const std::string name = ds.name;
    ds = ds.slice(src.offset, count);
    ds.name = name;
  }
  if (src.pad_to > 0) ds = pad_images(ds, src.pad_to, src.pad_to);
  if (src.shift) ds = apply_shift(ds, *src.shift);
  ds.split = split;
  return ds;
}

std::string fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot hash '" + path.string() + "'");
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace hesscope
