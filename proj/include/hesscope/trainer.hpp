#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "hesscope/data.hpp"
#include "hesscope/models.hpp"
#include "hesscope/params.hpp"

namespace hesscope {

enum class Optimizer { adam, sgd };

std::string to_string(Optimizer opt);
Optimizer optimizer_from_string(const std::string& name);

/// Adam moments in the flat parameter space. Kept in double; the weights themselves are f32.
struct AdamState {
  FlatVector m, v;
  int64_t step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lr = 1e-3;

  static AdamState zeros(int64_t dim, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  int64_t batch_size = 64;
  Optimizer optimizer = Optimizer::adam;
  uint64_t seed = 1;
  int checkpoint_every = 5;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void validate() const;
};

struct Checkpoint {
  ModelSpec spec;
  ParamVector params;  // includes BN running statistics
  std::optional<AdamState> adam;
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  /// Batch order of epoch e is drawn from derive_seed(seed, {1, e}), so (seed, epoch)
  /// is the whole RNG state.
  uint64_t seed = 0;
};

struct EpochRecord {
  int epoch;
  double loss;      // mean batch loss over the epoch
  double accuracy;  // fraction of training samples classified correctly during the epoch (train mode)
};

/// Bias-corrected Adam update in place; step_count is incremented.
void adam_step(ParamVector& params, const FlatVector& grad, AdamState& state);
void sgd_step(ParamVector& params, const FlatVector& grad, double lr);

/// Initial weights used by train() for a given seed.
ParamVector initial_params(const ModelSpec& spec, uint64_t seed);

struct TrainOptions {
  /// Checkpoints go here as epoch_XXXX.llac; nothing is written when empty.
  std::filesystem::path checkpoint_dir;
  /// Continue from this checkpoint instead of a fresh initialization.
  const Checkpoint* resume = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint final;
  std::vector<EpochRecord> history;
  std::vector<std::filesystem::path> checkpoint_files;
};

/// Sequential minibatch training. BN running statistics are updated here (and only here),
/// from the batch statistics of each training step.
TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg, const TrainOptions& opts = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path checkpoint_filename(int epoch);

}  // namespace hesscope
