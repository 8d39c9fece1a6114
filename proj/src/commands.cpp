#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "hesscope/experiment.hpp"
#include "hesscope/io.hpp"
#include "hesscope/random.hpp"
#include "hesscope/serialize.hpp"

namespace hesscope {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string format9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

/// Records the resolved config and a hash of every input next to the outputs.
void write_manifest(const ExperimentConfig& cfg, const CommandResult& res, const std::string& command,
                    const std::vector<std::filesystem::path>& inputs) {
  ordered_json in = ordered_json::array();
  for (const auto& full : inputs) {
    // Shown relative to the config file so the manifest does not depend on the working directory.
    const std::string shown = cfg.base_dir.empty() ? full.generic_string()
                                                   : full.lexically_relative(cfg.base_dir).generic_string();
    in.push_back({{"path", shown}, {"bytes", std::filesystem::file_size(full)}, {"fnv1a64", fnv1a64_file(full)}});
  }
  ordered_json m;
  m["tool"] = "hesscope";
  m["command"] = command;
  m["config"] = ordered_json::parse(to_json(cfg).dump());
  m["inputs"] = in;
  m["outputs"] = res.outputs;
  write_text_file(res.dir / "manifest.json", dump_json(m));
}

std::vector<std::filesystem::path> data_inputs(const ExperimentConfig& cfg, bool with_b) {
  std::vector<std::filesystem::path> out;
  for (const auto& f : cfg.data_a.inputs()) out.push_back(cfg.resolve(f));
  if (with_b && cfg.data_b) {
    for (const auto& f : cfg.data_b->inputs()) out.push_back(cfg.resolve(f));
  }
  return out;
}

/// Input shape and class count agree with the model, before any expensive work.
void check_compatible(const ModelSpec& spec, const Dataset& ds, const std::string& which) {
  const Shape& s = ds.images.shape();
  if (s.size() != 4 || s[1] != spec.channels || s[2] != spec.height || s[3] != spec.width) {
    throw ConfigError("dataset " + which + " has samples of shape " + shape_str(Shape(s.begin() + 1, s.end())) +
                      ", the model expects [" + std::to_string(spec.channels) + ", " + std::to_string(spec.height) +
                      ", " + std::to_string(spec.width) + "]");
  }
  if (ds.class_count > spec.class_count) {
    throw ClassCountMismatch("dataset " + which + " has " + std::to_string(ds.class_count) + " classes, the model " +
                             std::to_string(spec.class_count));
  }
}

Dataset dataset_a(const ExperimentConfig& cfg, const ModelSpec& spec) {
  Dataset ds = load_dataset(cfg, cfg.data_a, Split::train);
  check_compatible(spec, ds, "a");
  return ds;
}

std::filesystem::path checkpoint_path(const ExperimentConfig& cfg) {
  if (!cfg.checkpoint.empty()) return cfg.resolve(cfg.checkpoint);
  const auto found = list_checkpoints(cfg.checkpoint_dir());
  if (found.empty()) {
    throw ConfigError("no checkpoint given and none under '" + cfg.checkpoint_dir().string() + "'; run train first");
  }
  return found.back();
}

/// First `count` batches of a seeded draw.
std::vector<Batch> draw_batches(const Dataset& ds, int count, int64_t size, uint64_t seed, const std::string& what) {
  if (ds.size() < count * size) {
    throw ConfigError(what + ": " + std::to_string(count) + " batches of " + std::to_string(size) + " exceed the " +
                      std::to_string(ds.size()) + " samples available");
  }
  auto idx = batch_indices(ds.size(), size, seed);
  std::vector<Batch> out;
  for (int k = 0; k < count; ++k) out.push_back(ds.gather(idx[static_cast<size_t>(k)]));
  return out;
}

DirectionPair build_directions(const ExperimentConfig& cfg, const Checkpoint& ck, const Batch& batch) {
  const DirectionsConfig& d = cfg.directions;
  DirectionPair dirs;
  if (d.source == "random") {
    dirs = random_directions(ck.params, d.dist == "uniform" ? DirectionSource::random_uniform
                                                            : DirectionSource::random_gaussian,
                             d.seed);
  } else if (d.source == "hessian") {
    PowerConfig pc;
    pc.seed = d.seed;
    dirs = hessian_axes(model_hvp_oracle(ck.spec, ck.params, batch, cfg.landscape.grid.mode), ck.params, pc);
  } else {
    if (!ck.adam) throw ColdOptimizer("checkpoint has no Adam state");
    dirs = adam_axes(*ck.adam);
  }
  if (d.freeze_bn) freeze_bn(dirs, ck.params);
  return normalize(dirs, ck.params, d.normalization);
}

void write_output(CommandResult& res, const std::string& name, const std::string& text) {
  write_text_file(res.dir / name, text);
  res.outputs.push_back(name);
}

CriteriaConfig criteria_for_b(const CriteriaConfig& c) {
  CriteriaConfig b = c;
  b.master_seed = derive_seed(c.master_seed, {2});
  return b;
}

void train_into(const ExperimentConfig& cfg, const Dataset& ds, CommandResult& res) {
  const auto ckdir = cfg.checkpoint_dir();
  std::filesystem::remove_all(ckdir);
  TrainOptions opts;
  opts.checkpoint_dir = ckdir;
  const TrainResult tr = train(cfg.model, ds, cfg.train, opts);
  std::string csv = "epoch,loss,train_acc\n";
  for (const auto& e : tr.history) csv += std::to_string(e.epoch) + "," + format9(e.loss) + "," + format9(e.accuracy) + "\n";
  write_output(res, "history.csv", csv);
  for (const auto& f : tr.checkpoint_files) res.outputs.push_back("checkpoints/" + f.filename().string());
}

}  // namespace

std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("epoch_", 0) == 0 && e.path().extension() == ".llac") out.push_back(e.path());
  }
  // Zero-padded names sort by epoch.
  std::sort(out.begin(), out.end());
  return out;
}

CommandResult cmd_train(const ExperimentConfig& cfg) {
  CommandResult res{cfg.command_dir("train"), {}};
  const Dataset ds = dataset_a(cfg, cfg.model);
  train_into(cfg, ds, res);
  write_manifest(cfg, res, "train", data_inputs(cfg, false));
  return res;
}

CommandResult cmd_landscape(const ExperimentConfig& cfg) {
  CommandResult res{cfg.command_dir("landscape"), {}};
  const auto ck_path = checkpoint_path(cfg);
  const Checkpoint ck = load_checkpoint(ck_path);
  const Dataset ds = dataset_a(cfg, ck.spec);
  const LandscapeConfig& lc = cfg.landscape;
  const Batch batch = draw_batches(ds, 1, lc.batch_size, derive_seed(lc.batch_seed, {5}), "landscape").front();

  const DirectionPair dirs = build_directions(cfg, ck, batch);
  save_directions(dirs, res.dir / "directions.llac");
  res.outputs.push_back("directions.llac");

  const LandscapeGrid grid = evaluate_grid(ck.spec, ck.params, batch, dirs, lc.grid);
  write_output(res, "landscape.csv", grid_csv(grid));
  const std::string title = to_string(ck.spec.architecture) + ", " + to_string(lc.grid.mode) + " mode, " +
                            cfg.directions.source + " axes, " + to_string(dirs.normalization) +
                            (lc.cap > 0 ? ", loss capped at " + format9(lc.cap) : "");
  write_output(res, "landscape.svg", heatmap_svg(lc.cap > 0 ? cap(grid, lc.cap) : grid, title));

  ordered_json ex;
  try {
    ex = explosion_json(detect_explosion(grid, lc.threshold), grid);
  } catch (const DegenerateCenter& e) {
    ex["exploded"] = nullptr;
    ex["error"] = e.what();
  }
  write_output(res, "explosion.json", dump_json(ex));

  auto inputs = data_inputs(cfg, false);
  inputs.push_back(ck_path);
  write_manifest(cfg, res, "landscape", inputs);
  return res;
}

CommandResult cmd_hesd(const ExperimentConfig& cfg) {
  CommandResult res{cfg.command_dir("hesd"), {}};
  const auto ck_path = checkpoint_path(cfg);
  const Checkpoint ck = load_checkpoint(ck_path);
  const Dataset ds = dataset_a(cfg, ck.spec);
  const HesdConfig& hc = cfg.hesd;
  const auto batches = draw_batches(ds, hc.batch_count, hc.batch_size, derive_seed(hc.batch_seed, {6}), "hesd");
  const SpectralDensity sd = hesd(ck.spec, ck.params, batches, hc.mode, hc.slq);
  const CriteriaReport crit = criteria_report(sd, cfg.criteria);
  write_output(res, "hesd.json", dump_json(hesd_json(sd, hc.slq, crit)));
  write_output(res, "hesd.svg", density_svg(sd, "HESD, " + to_string(ck.spec.architecture) + ", epoch " +
                                                    std::to_string(ck.epoch) + ", " + to_string(hc.mode) + " mode"));
  auto inputs = data_inputs(cfg, false);
  inputs.push_back(ck_path);
  write_manifest(cfg, res, "hesd", inputs);
  return res;
}

CommandResult cmd_criteria(const ExperimentConfig& cfg) {
  CommandResult res{cfg.command_dir("criteria"), {}};
  const auto ck_path = checkpoint_path(cfg);
  const Checkpoint ck = load_checkpoint(ck_path);
  const Dataset a = dataset_a(cfg, ck.spec);
  const CriteriaReport rep = stability_protocol(ck.spec, ck.params, a, cfg.criteria_mode, cfg.hesd.slq, cfg.criteria);
  write_output(res, "criteria.csv", criteria_csv(rep));
  write_output(res, "criteria.json", dump_json(criteria_json(rep)));
  if (cfg.data_b) {
    const Dataset b = load_dataset(cfg, *cfg.data_b, Split::test);
    check_compatible(ck.spec, b, "b");
    const CriteriaReport rb =
        stability_protocol(ck.spec, ck.params, b, cfg.criteria_mode, cfg.hesd.slq, criteria_for_b(cfg.criteria));
    write_output(res, "criteria_b.csv", criteria_csv(rb));
    write_output(res, "criteria_b.json", dump_json(criteria_json(rb)));
  }
  auto inputs = data_inputs(cfg, true);
  inputs.push_back(ck_path);
  write_manifest(cfg, res, "criteria", inputs);
  return res;
}

std::vector<GenexpEntry> genexp_series(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& checkpoints,
                                       const Dataset& a, const Dataset& b) {
  std::vector<GenexpEntry> out;
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    GenexpEntry e;
    e.epoch = ck.epoch;
    if (!out.empty() && e.epoch <= out.back().epoch) throw Error("checkpoint epochs are not increasing at " + path.string());
    e.train_acc = accuracy(ck.spec, ck.params, a, Mode::eval);
    e.gen_acc = accuracy(ck.spec, ck.params, b, Mode::eval);
    e.a = stability_protocol(ck.spec, ck.params, a, cfg.criteria_mode, cfg.hesd.slq, cfg.criteria);
    e.b = stability_protocol(ck.spec, ck.params, b, cfg.criteria_mode, cfg.hesd.slq, criteria_for_b(cfg.criteria));
    out.push_back(std::move(e));
  }
  return out;
}

CommandResult cmd_genexp(const ExperimentConfig& cfg) {
  if (!cfg.data_b) throw ConfigError("genexp needs dataset 'b'");
  CommandResult res{cfg.command_dir("genexp"), {}};
  const Dataset a = dataset_a(cfg, cfg.model);
  const Dataset b = load_dataset(cfg, *cfg.data_b, Split::test);
  if (a.class_count != b.class_count) {
    throw ClassCountMismatch("datasets a and b have " + std::to_string(a.class_count) + " and " +
                             std::to_string(b.class_count) + " classes");
  }
  check_compatible(cfg.model, b, "b");

  auto checkpoints = list_checkpoints(cfg.checkpoint_dir());
  if (checkpoints.empty()) {
    CommandResult tr{cfg.command_dir("train"), {}};
    train_into(cfg, a, tr);
    write_manifest(cfg, tr, "train", data_inputs(cfg, false));
    checkpoints = list_checkpoints(cfg.checkpoint_dir());
  }
  const auto series = genexp_series(cfg, checkpoints, a, b);

  std::string csv = "epoch,train_acc,gen_acc,kh05_A,kh05_B,kh1_A,kh1_B,re_A,re_B\n";
  for (const auto& e : series) {
    csv += std::to_string(e.epoch);
    for (double v : {e.train_acc, e.gen_acc, e.a.at("k_h05").mean, e.b.at("k_h05").mean, e.a.at("k_h1").mean,
                     e.b.at("k_h1").mean, e.a.at("r_e").mean, e.b.at("r_e").mean}) {
      csv += "," + format9(v);
    }
    csv += "\n";
  }
  write_output(res, "genexp.csv", csv);

  const GenexpEntry& last = series.back();
  ordered_json summary;
  summary["final_epoch"] = last.epoch;
  summary["train_acc"] = json_util::round9(last.train_acc);
  summary["gen_acc"] = json_util::round9(last.gen_acc);
  summary["kh05_A"] = json_util::round9(last.a.at("k_h05").mean);
  summary["kh05_B"] = json_util::round9(last.b.at("k_h05").mean);
  summary["kh05_increase_ratio"] = json_util::round9(last.b.at("k_h05").mean / last.a.at("k_h05").mean);
  summary["checkpoints"] = series.size();
  write_output(res, "summary.json", dump_json(summary));

  auto inputs = data_inputs(cfg, true);
  for (const auto& c : checkpoints) inputs.push_back(c);
  write_manifest(cfg, res, "genexp", inputs);
  return res;
}

std::string cmd_info(const ExperimentConfig& cfg) {
  const ParamVector p = build_model(cfg.model, derive_seed(cfg.train.seed, {0}));
  std::ostringstream out;
  out << "model " << to_string(cfg.model.architecture) << ": [" << cfg.model.channels << ", " << cfg.model.height << ", "
      << cfg.model.width << "] -> " << cfg.model.class_count << " classes\n";
  for (const auto& e : p.entries()) {
    out << "  " << e.name << " " << shape_str(e.tensor.shape()) << " " << to_string(e.kind) << " " << e.tensor.numel()
        << (is_differentiable(e.kind) ? "" : " (not differentiable)") << "\n";
  }
  out << "differentiable parameters: " << p.total_len() << "\n";
  out << "config:\n" << to_json(cfg).dump(2) << "\n";
  return out.str();
}

int run_cli(const std::string& command, const std::filesystem::path& config_path, const std::vector<std::string>& overrides) {
  try {
    const ExperimentConfig cfg = load_experiment_config(config_path, overrides);
    CommandResult res;
    if (command == "train") {
      res = cmd_train(cfg);
    } else if (command == "landscape") {
      res = cmd_landscape(cfg);
    } else if (command == "hesd") {
      res = cmd_hesd(cfg);
    } else if (command == "criteria") {
      res = cmd_criteria(cfg);
    } else if (command == "genexp") {
      res = cmd_genexp(cfg);
    } else if (command == "info") {
      std::cout << cmd_info(cfg);
      return 0;
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    for (const auto& o : res.outputs) std::cout << (res.dir / o).string() << "\n";
    std::cout << (res.dir / "manifest.json").string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "hesscope " << command << ": configuration error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "hesscope " << command << ": configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "hesscope " << command << ": " << e.what() << "\n";
    return 3;
  }
}

}  // namespace hesscope
