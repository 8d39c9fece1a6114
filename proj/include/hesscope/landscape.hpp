#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hesscope/data.hpp"
#include "hesscope/directions.hpp"
#include "hesscope/models.hpp"

namespace hesscope {

struct GridSpec {
  double range = 20.0;
  int steps = 40;
  Mode mode = Mode::eval;

  /// Throws ConfigError unless steps is even and ≥ 2 and range > 0.
  void validate() const;
  int side() const { return steps + 1; }
  /// Coefficient of index i; exactly 0 at steps/2 and odd in (i - steps/2).
  double coefficient(int i) const;
};

enum class Schedule { serial, parallel };

struct LandscapeGrid {
  GridSpec spec;
  /// Row-major over (i, j): entry i * side + j holds L(w + a_i d1 + b_j d2).
  std::vector<double> losses;
  std::vector<bool> finite;
  double center_loss = 0;
  DirectionSource source = DirectionSource::random_gaussian;
  NormScheme normalization = NormScheme::none;
  bool freeze_bn = false;
  uint64_t direction_seed = 0;

  double at(int i, int j) const { return losses[static_cast<size_t>(i * spec.side() + j)]; }
};

/// Loss as a function of the perturbed flat weights. Must be safe to call concurrently.
using FlatLoss = std::function<double(const FlatVector&)>;

LandscapeGrid evaluate_grid(const FlatLoss& loss_at, const FlatVector& w, const DirectionPair& dirs,
                            const GridSpec& spec, Schedule schedule = Schedule::parallel);

/// Cross-entropy of the model on one fixed batch. BN running statistics are read, never updated.
LandscapeGrid evaluate_grid(const ModelSpec& model, const ParamVector& params, const Batch& batch,
                            const DirectionPair& dirs, const GridSpec& spec, Schedule schedule = Schedule::parallel);

inline constexpr double kExplosionThreshold = 1e3;

struct ExplosionReport {
  bool exploded = false;
  /// Largest finite loss over the center loss.
  double max_finite_ratio = 0;
  int64_t nonfinite_count = 0;
  double threshold = kExplosionThreshold;
};

/// Throws DegenerateCenter when the center loss is not a positive finite number.
ExplosionReport detect_explosion(const LandscapeGrid& grid, double threshold = kExplosionThreshold);

/// Clamps losses to cap_value and replaces non-finite ones with it; the finite mask is kept.
LandscapeGrid cap(const LandscapeGrid& grid, double cap_value);

/// `i,j,a,b,loss,finite`, one row per point in row-major order, 9 significant digits.
std::string grid_csv(const LandscapeGrid& grid);
void write_grid_csv(const LandscapeGrid& grid, const std::filesystem::path& path);

}  // namespace hesscope
