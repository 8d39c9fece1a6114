#include "hesscope/landscape.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>

#include "hesscope/io.hpp"

namespace hesscope {

void GridSpec::validate() const {
  if (steps < 2 || steps % 2 != 0) throw ConfigError("grid steps must be even and >= 2, got " + std::to_string(steps));
  if (!(range > 0) || !std::isfinite(range)) throw ConfigError("grid range must be positive");
}

double GridSpec::coefficient(int i) const {
  // Counting from the center keeps a = 0 exact and makes a(S - i) == -a(i) bit for bit.
  return static_cast<double>(i - steps / 2) * (2.0 * range / steps);
}

LandscapeGrid evaluate_grid(const FlatLoss& loss_at, const FlatVector& w, const DirectionPair& dirs,
                            const GridSpec& spec, Schedule schedule) {
  spec.validate();
  if (dirs.d1.size() != w.size() || dirs.d2.size() != w.size()) {
    throw DimensionMismatch("directions have length " + std::to_string(dirs.d1.size()) + "/" +
                            std::to_string(dirs.d2.size()) + ", weights " + std::to_string(w.size()));
  }
  const int side = spec.side();
  const int64_t count = int64_t{side} * side;
  const int64_t center = int64_t{spec.steps / 2} * side + spec.steps / 2;

  LandscapeGrid grid;
  grid.spec = spec;
  grid.source = dirs.source;
  grid.normalization = dirs.normalization;
  grid.freeze_bn = dirs.freeze_bn;
  grid.direction_seed = dirs.seed;
  grid.losses.assign(static_cast<size_t>(count), 0.0);

  auto point = [&](int64_t k) {
    if (k == center) return loss_at(w);
    const double a = spec.coefficient(static_cast<int>(k / side));
    const double b = spec.coefficient(static_cast<int>(k % side));
    return loss_at(w + a * dirs.d1 + b * dirs.d2);
  };

  if (schedule == Schedule::serial) {
    for (int64_t k = 0; k < count; ++k) grid.losses[static_cast<size_t>(k)] = point(k);
  } else {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int64_t k = 0; k < count; ++k) {
      try {
        grid.losses[static_cast<size_t>(k)] = point(k);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  grid.finite.resize(grid.losses.size());
  for (size_t k = 0; k < grid.losses.size(); ++k) grid.finite[k] = std::isfinite(grid.losses[k]);
  grid.center_loss = grid.losses[static_cast<size_t>(center)];
  return grid;
}

LandscapeGrid evaluate_grid(const ModelSpec& model, const ParamVector& params, const Batch& batch,
                            const DirectionPair& dirs, const GridSpec& spec, Schedule schedule) {
  const FlatLoss loss_at = [&](const FlatVector& flat) {
    return loss(model, params.unflatten(flat), batch, spec.mode);
  };
  return evaluate_grid(loss_at, params.flatten(), dirs, spec, schedule);
}

ExplosionReport detect_explosion(const LandscapeGrid& grid, double threshold) {
  if (!std::isfinite(grid.center_loss) || grid.center_loss <= 0) {
    throw DegenerateCenter("center loss " + std::to_string(grid.center_loss) + " cannot anchor an explosion ratio");
  }
  ExplosionReport r;
  r.threshold = threshold;
  double max_finite = -std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < grid.losses.size(); ++k) {
    if (grid.finite[k]) {
      max_finite = std::max(max_finite, grid.losses[k]);
    } else {
      ++r.nonfinite_count;
    }
  }
  r.max_finite_ratio = max_finite / grid.center_loss;
  r.exploded = r.nonfinite_count > 0 || r.max_finite_ratio > threshold;
  return r;
}

LandscapeGrid cap(const LandscapeGrid& grid, double cap_value) {
  LandscapeGrid out = grid;
  for (size_t k = 0; k < out.losses.size(); ++k) {
    double& x = out.losses[k];
    x = std::isfinite(x) ? std::min(x, cap_value) : cap_value;
  }
  out.center_loss = out.losses[static_cast<size_t>((grid.spec.steps / 2) * grid.spec.side() + grid.spec.steps / 2)];
  return out;
}

std::string grid_csv(const LandscapeGrid& grid) {
  std::string out = "i,j,a,b,loss,finite\n";
  char line[160];
  const int side = grid.spec.side();
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const size_t k = static_cast<size_t>(i * side + j);
      std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g,%.9g,%d\n", i, j, grid.spec.coefficient(i),
                    grid.spec.coefficient(j), grid.losses[k], grid.finite[k] ? 1 : 0);
      out += line;
    }
  }
  return out;
}

void write_grid_csv(const LandscapeGrid& grid, const std::filesystem::path& path) {
  write_text_file(path, grid_csv(grid));
}

}  // namespace hesscope
