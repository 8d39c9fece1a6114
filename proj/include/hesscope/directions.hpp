#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hesscope/params.hpp"
#include "hesscope/spectral.hpp"
#include "hesscope/trainer.hpp"

namespace hesscope {

enum class DirectionSource { random_uniform, random_gaussian, hessian, adam };
enum class NormScheme { none, weight, filter_l1, filter_l2, layer, model };

std::string to_string(DirectionSource s);
DirectionSource direction_source_from_string(const std::string& name);
std::string to_string(NormScheme s);
NormScheme norm_scheme_from_string(const std::string& name);

struct DirectionPair {
  FlatVector d1, d2;
  DirectionSource source = DirectionSource::random_gaussian;
  NormScheme normalization = NormScheme::none;
  bool freeze_bn = false;
  uint64_t seed = 0;
  /// Hessian axes only: eigenvalue estimates (λ1 ≥ λ2) and whether both iterations converged.
  std::vector<double> eigenvalues;
  bool converged = true;
};

inline constexpr double kNormDelta = 1e-10;

/// i.i.d. coordinates: standard normal, or uniform on [-1, 1]. d1 and d2 come from
/// separate seed streams.
DirectionPair random_directions(const ParamVector& like, DirectionSource dist, uint64_t seed);

/// Top-2 Hessian eigenvectors by algebraic eigenvalue.
DirectionPair hessian_axes(const HvpOracle& op, const ParamVector& like, const PowerConfig& cfg);

/// d1 = m, d2 = v. Throws ColdOptimizer before the first step.
DirectionPair adam_axes(const AdamState& state);

/// Zeroes the coordinates of BN gamma/beta in both directions.
void freeze_bn(DirectionPair& dirs, const ParamVector& like);

/// Rescales d against the weights. A filter is an output-channel (row) slice of a tensor
/// of rank ≥ 2 and the whole tensor for vectors; layer means one named tensor.
FlatVector normalize(const FlatVector& d, const ParamVector& weights, NormScheme scheme);
DirectionPair normalize(const DirectionPair& dirs, const ParamVector& weights, NormScheme scheme);

/// Slices [offset, offset + len) of the flat view, one per filter, in flat order.
struct FlatSlice {
  int64_t offset, len;
};
std::vector<FlatSlice> filter_slices(const ParamVector& like);
std::vector<FlatSlice> layer_slices(const ParamVector& like);

/// LLAC container with f64 tensors "d1" and "d2".
void save_directions(const DirectionPair& dirs, const std::filesystem::path& path);
DirectionPair load_directions(const std::filesystem::path& path);

}  // namespace hesscope
