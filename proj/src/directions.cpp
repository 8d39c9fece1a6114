#include "hesscope/directions.hpp"

#include <cmath>

#include "hesscope/llac.hpp"
#include "hesscope/random.hpp"

namespace hesscope {

std::string to_string(DirectionSource s) {
  switch (s) {
    case DirectionSource::random_uniform: return "random_uniform";
    case DirectionSource::random_gaussian: return "random_gaussian";
    case DirectionSource::hessian: return "hessian";
    case DirectionSource::adam: return "adam";
  }
  return "unknown";
}

DirectionSource direction_source_from_string(const std::string& name) {
  for (auto s : {DirectionSource::random_uniform, DirectionSource::random_gaussian, DirectionSource::hessian,
                 DirectionSource::adam}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown direction source '" + name + "'");
}

std::string to_string(NormScheme s) {
  switch (s) {
    case NormScheme::none: return "none";
    case NormScheme::weight: return "weight";
    case NormScheme::filter_l1: return "filter_l1";
    case NormScheme::filter_l2: return "filter_l2";
    case NormScheme::layer: return "layer";
    case NormScheme::model: return "model";
  }
  return "unknown";
}

NormScheme norm_scheme_from_string(const std::string& name) {
  for (auto s : {NormScheme::none, NormScheme::weight, NormScheme::filter_l1, NormScheme::filter_l2, NormScheme::layer,
                 NormScheme::model}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown normalization '" + name + "'");
}

DirectionPair random_directions(const ParamVector& like, DirectionSource dist, uint64_t seed) {
  if (dist != DirectionSource::random_uniform && dist != DirectionSource::random_gaussian) {
    throw ConfigError("random_directions takes random_uniform or random_gaussian");
  }
  const int64_t n = like.total_len();
  auto draw = [&](uint64_t stream) {
    Rng rng(derive_seed(seed, {stream}));
    NormalSampler normal;
    FlatVector d(n);
    for (int64_t i = 0; i < n; ++i) d[i] = dist == DirectionSource::random_gaussian ? normal(rng) : uniform(rng, -1, 1);
    return d;
  };
  DirectionPair out;
  out.d1 = draw(1);
  out.d2 = draw(2);
  out.source = dist;
  out.seed = seed;
  return out;
}

DirectionPair hessian_axes(const HvpOracle& op, const ParamVector& like, const PowerConfig& cfg) {
  const auto pairs = top_eigenpairs(op, like.total_len(), 2, cfg);
  DirectionPair out;
  out.source = DirectionSource::hessian;
  out.seed = cfg.seed;
  out.d1 = pairs[0].vector;
  out.d2 = pairs[1].vector;
  out.eigenvalues = {pairs[0].value, pairs[1].value};
  // The deflated search can only beat the first pair when that one stopped early.
  if (out.eigenvalues[1] > out.eigenvalues[0]) {
    std::swap(out.d1, out.d2);
    std::swap(out.eigenvalues[0], out.eigenvalues[1]);
  }
  out.converged = pairs[0].converged && pairs[1].converged;
  return out;
}

DirectionPair adam_axes(const AdamState& state) {
  if (state.step_count == 0) throw ColdOptimizer("Adam axes need at least one optimizer step");
  DirectionPair out;
  out.source = DirectionSource::adam;
  out.d1 = state.m;
  out.d2 = state.v;
  return out;
}

void freeze_bn(DirectionPair& dirs, const ParamVector& like) {
  const FlatVector keep = like.coordinate_mask([](ParamKind k) { return !is_bn_affine(k); });
  if (dirs.d1.size() != keep.size() || dirs.d2.size() != keep.size()) throw DimensionMismatch("freeze_bn: length mismatch");
  dirs.d1 = dirs.d1.cwiseProduct(keep);
  dirs.d2 = dirs.d2.cwiseProduct(keep);
  dirs.freeze_bn = true;
}

std::vector<FlatSlice> filter_slices(const ParamVector& like) {
  std::vector<FlatSlice> out;
  const auto offsets = like.flat_offsets();
  for (size_t e = 0; e < like.size(); ++e) {
    if (!offsets[e]) continue;
    const Tensor& t = like.entries()[e].tensor;
    if (t.rank() >= 2) {
      const int64_t rows = t.dim(0), len = t.numel() / rows;
      for (int64_t r = 0; r < rows; ++r) out.push_back({*offsets[e] + r * len, len});
    } else {
      out.push_back({*offsets[e], t.numel()});
    }
  }
  return out;
}

std::vector<FlatSlice> layer_slices(const ParamVector& like) {
  std::vector<FlatSlice> out;
  const auto offsets = like.flat_offsets();
  for (size_t e = 0; e < like.size(); ++e) {
    if (offsets[e]) out.push_back({*offsets[e], like.entries()[e].tensor.numel()});
  }
  return out;
}

FlatVector normalize(const FlatVector& d, const ParamVector& weights, NormScheme scheme) {
  const FlatVector w = weights.flatten();
  if (d.size() != w.size()) {
    throw DimensionMismatch("normalize: direction length " + std::to_string(d.size()) + " vs parameters " +
                            std::to_string(w.size()));
  }
  FlatVector out = d;
  auto rescale = [&](const std::vector<FlatSlice>& slices, bool l1) {
    for (const auto& s : slices) {
      auto ds = out.segment(s.offset, s.len);
      const auto ws = w.segment(s.offset, s.len);
      const double wn = l1 ? ws.lpNorm<1>() : ws.norm();
      const double dn = l1 ? ds.lpNorm<1>() : ds.norm();
      ds *= wn / (dn + kNormDelta);
    }
  };
  switch (scheme) {
    case NormScheme::none: break;
    case NormScheme::weight: out = d.cwiseProduct(w); break;
    case NormScheme::filter_l1: rescale(filter_slices(weights), true); break;
    case NormScheme::filter_l2: rescale(filter_slices(weights), false); break;
    case NormScheme::layer: rescale(layer_slices(weights), false); break;
    case NormScheme::model: rescale({{0, w.size()}}, false); break;
  }
  return out;
}

DirectionPair normalize(const DirectionPair& dirs, const ParamVector& weights, NormScheme scheme) {
  DirectionPair out = dirs;
  out.d1 = normalize(dirs.d1, weights, scheme);
  out.d2 = normalize(dirs.d2, weights, scheme);
  out.normalization = scheme;
  return out;
}

void save_directions(const DirectionPair& dirs, const std::filesystem::path& path) {
  LlacFile file;
  file.meta["source"] = to_string(dirs.source);
  file.meta["normalization"] = to_string(dirs.normalization);
  file.meta["freeze_bn"] = dirs.freeze_bn;
  file.meta["seed"] = dirs.seed;
  file.meta["eigenvalues"] = dirs.eigenvalues;
  file.meta["converged"] = dirs.converged;
  const auto n = static_cast<int64_t>(dirs.d1.size());
  file.tensors.push_back({"d1", "direction", {n}, std::vector<double>(dirs.d1.data(), dirs.d1.data() + n)});
  file.tensors.push_back({"d2", "direction", {n}, std::vector<double>(dirs.d2.data(), dirs.d2.data() + n)});
  write_llac(file, path);
}

DirectionPair load_directions(const std::filesystem::path& path) {
  const LlacFile file = read_llac(path);
  DirectionPair out;
  try {
    out.source = direction_source_from_string(file.meta.at("source").get<std::string>());
    out.normalization = norm_scheme_from_string(file.meta.at("normalization").get<std::string>());
    out.freeze_bn = file.meta.at("freeze_bn").get<bool>();
    out.seed = file.meta.at("seed").get<uint64_t>();
    out.eigenvalues = file.meta.at("eigenvalues").get<std::vector<double>>();
    out.converged = file.meta.at("converged").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  auto vec = [&](const char* name) {
    const auto& t = file.at(name);
    if (t.data.index() != 1) throw ManifestError(path.string() + ": '" + name + "' is not f64");
    const auto& v = std::get<1>(t.data);
    return FlatVector(Eigen::Map<const FlatVector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  out.d1 = vec("d1");
  out.d2 = vec("d2");
  if (out.d1.size() != out.d2.size()) throw ManifestError(path.string() + ": d1 and d2 differ in length");
  return out;
}

}  // namespace hesscope
