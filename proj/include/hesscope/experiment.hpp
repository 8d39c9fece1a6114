#pragma once

// Experiment configuration and the commands behind the `hesscope` executable.
// Every command is a function of (config, input files) and writes its outputs under
// <output_dir>/<command>/ together with a manifest.json.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hesscope/criteria.hpp"
#include "hesscope/data.hpp"
#include "hesscope/directions.hpp"
#include "hesscope/landscape.hpp"
#include "hesscope/spectral.hpp"
#include "hesscope/trainer.hpp"

namespace hesscope {

struct DatasetSource {
  enum class Format { idx, raw };
  Format format = Format::idx;
  std::string images, labels;  // idx
  std::string path;            // raw
  int64_t pad_to = 0;          // 0 keeps the stored size
  int64_t offset = 0;
  int64_t count = -1;  // -1: to the end
  std::optional<ShiftSpec> shift;

  /// Files this source reads, as written in the config.
  std::vector<std::string> inputs() const;
};

struct DirectionsConfig {
  /// random | hessian | adam
  std::string source = "random";
  /// gaussian | uniform (random source only)
  std::string dist = "gaussian";
  NormScheme normalization = NormScheme::filter_l2;
  bool freeze_bn = false;
  uint64_t seed = 0;
};

struct LandscapeConfig {
  GridSpec grid;
  int64_t batch_size = 64;
  uint64_t batch_seed = 0;
  double threshold = kExplosionThreshold;
  /// Heatmap cap; 0 draws uncapped values.
  double cap = 0;
};

struct HesdConfig {
  SlqConfig slq;
  Mode mode = Mode::eval;
  int batch_count = 1;
  int64_t batch_size = 64;
  uint64_t batch_seed = 0;
};

struct ExperimentConfig {
  ModelSpec model;
  TrainConfig train;
  DatasetSource data_a;
  std::optional<DatasetSource> data_b;
  DirectionsConfig directions;
  LandscapeConfig landscape;
  HesdConfig hesd;
  CriteriaConfig criteria;
  Mode criteria_mode = Mode::eval;
  /// Checkpoint read by landscape/hesd/criteria; empty means the newest one from `train`.
  std::string checkpoint;
  std::string output_dir = "out";
  /// Relative paths resolve against this directory (the config file's).
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  std::filesystem::path command_dir(const std::string& command) const;
  std::filesystem::path checkpoint_dir() const { return command_dir("train") / "checkpoints"; }
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Strict: unknown keys and malformed values are ConfigErrors.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads the file, applies overrides in order and validates, including input existence.
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Loads, pads, slices and shifts a dataset source.
Dataset load_dataset(const ExperimentConfig& cfg, const DatasetSource& src, Split split);

/// FNV-1a 64-bit hash of a file's bytes, as 16 lowercase hex digits.
std::string fnv1a64_file(const std::filesystem::path& path);

struct GenexpEntry {
  int epoch = 0;
  double train_acc = 0, gen_acc = 0;
  CriteriaReport a, b;
};

struct CommandResult {
  std::filesystem::path dir;
  std::vector<std::string> outputs;
};

CommandResult cmd_train(const ExperimentConfig& cfg);
CommandResult cmd_landscape(const ExperimentConfig& cfg);
CommandResult cmd_hesd(const ExperimentConfig& cfg);
CommandResult cmd_criteria(const ExperimentConfig& cfg);
/// Trains on A when `train` has left no checkpoints, then evaluates every checkpoint on A and B.
CommandResult cmd_genexp(const ExperimentConfig& cfg);
/// Parameter counts and the resolved config, as printed by `hesscope info`.
std::string cmd_info(const ExperimentConfig& cfg);

/// Criteria of every checkpoint on A and B (B batches use a seed derived from the master seed).
std::vector<GenexpEntry> genexp_series(const ExperimentConfig& cfg, const std::vector<std::filesystem::path>& checkpoints,
                                       const Dataset& a, const Dataset& b);

/// Checkpoint files in a directory, ordered by epoch.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);

// Report rendering --------------------------------------------------------------------

/// Heatmap of log10(loss) per grid cell; non-finite cells are grey.
std::string heatmap_svg(const LandscapeGrid& grid, const std::string& title);
/// Density on a log10 y axis.
std::string density_svg(const SpectralDensity& sd, const std::string& title);

/// Output documents keep their documented field order; floats carry 9 significant digits.
nlohmann::ordered_json hesd_json(const SpectralDensity& sd, const SlqConfig& cfg, const CriteriaReport& criteria);
nlohmann::ordered_json criteria_json(const CriteriaReport& report);
nlohmann::ordered_json explosion_json(const ExplosionReport& r, const LandscapeGrid& grid);

/// Two-space indented JSON with floats printed as %.9g (the library's dump may emit 17 digits).
std::string dump_json(const nlohmann::ordered_json& j);

/// Runs a command by name and maps failures to exit codes: 2 for configuration, 3 at runtime.
int run_cli(const std::string& command, const std::filesystem::path& config_path, const std::vector<std::string>& overrides);

}  // namespace hesscope
