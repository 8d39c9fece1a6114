#include "hesscope/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hesscope/random.hpp"

namespace hesscope {

std::string to_string(ExponentPlacement p) { return p == ExponentPlacement::per_term ? "per_term" : "outer"; }

ExponentPlacement exponent_placement_from_string(const std::string& name) {
  if (name == "per_term") return ExponentPlacement::per_term;
  if (name == "outer") return ExponentPlacement::outer;
  throw ConfigError("unknown exponent_placement '" + name + "'");
}

void CriteriaConfig::validate() const {
  if (exponents.empty()) throw ConfigError("criteria need at least one exponent");
  for (double n : exponents) {
    if (!(n > 0) || !std::isfinite(n)) throw ConfigError("criteria exponents must be positive");
  }
  if (!(zero_band >= 0)) throw ConfigError("zero_band must be >= 0");
  if (n_hes < 1) throw ConfigError("n_hes must be >= 1");
  if (batch_count < 1) throw ConfigError("batch_count must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::string k_h_name(double n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", n);
  std::string digits;
  for (const char* c = buf; *c; ++c) {
    if (*c != '.') digits += *c;
  }
  return "k_h" + digits;
}

namespace {

/// The spectrum split at the zero band: |λ|·w on each side.
struct Sides {
  std::vector<double> neg_lambda, pos_lambda, neg_mass, pos_mass;
};

Sides split(const std::vector<double>& ritz, const std::vector<double>& weights, double zero_band) {
  if (ritz.size() != weights.size()) throw DimensionMismatch("ritz and weights differ in length");
  double scale = 0;
  for (double l : ritz) scale = std::max(scale, std::abs(l));
  const double band = zero_band * scale;
  Sides s;
  for (size_t i = 0; i < ritz.size(); ++i) {
    if (ritz[i] > band) {
      s.pos_lambda.push_back(ritz[i]);
      s.pos_mass.push_back(weights[i]);
    } else if (ritz[i] < -band) {
      s.neg_lambda.push_back(-ritz[i]);
      s.neg_mass.push_back(weights[i]);
    }
  }
  if (s.pos_lambda.empty()) throw NoPositiveSpectrum("no Ritz value above the zero band");
  return s;
}

double side_sum(const std::vector<double>& lambda, const std::vector<double>& mass, double n, ExponentPlacement p) {
  std::vector<double> terms(lambda.size());
  for (size_t i = 0; i < lambda.size(); ++i) terms[i] = lambda[i] * mass[i];
  // Summing in sorted order makes a mirrored spectrum give bit-identical sides.
  std::sort(terms.begin(), terms.end());
  double total = 0;
  for (double x : terms) total += p == ExponentPlacement::per_term ? std::pow(x, n) : x;
  return p == ExponentPlacement::per_term ? total : std::pow(total, n);
}

}  // namespace

double r_e(const std::vector<double>& ritz, const std::vector<double>& weights, double zero_band) {
  const Sides s = split(ritz, weights, zero_band);
  if (s.neg_lambda.empty()) return 0.0;
  return *std::max_element(s.neg_lambda.begin(), s.neg_lambda.end()) /
         *std::max_element(s.pos_lambda.begin(), s.pos_lambda.end());
}

double k_h(const std::vector<double>& ritz, const std::vector<double>& weights, double n, double zero_band,
           ExponentPlacement placement) {
  const Sides s = split(ritz, weights, zero_band);
  if (s.neg_lambda.empty()) return 0.0;
  return side_sum(s.neg_lambda, s.neg_mass, n, placement) / side_sum(s.pos_lambda, s.pos_mass, n, placement);
}

double negative_mass(const std::vector<double>& ritz, const std::vector<double>& weights, double zero_band) {
  const Sides s = split(ritz, weights, zero_band);
  double total = 0;
  for (double w : s.neg_mass) total += w;
  return total;
}

const Aggregate& CriteriaReport::at(const std::string& criterion) const {
  const auto it = aggregates.find(criterion);
  if (it == aggregates.end()) throw ConfigError("no criterion '" + criterion + "' in report");
  return it->second;
}

CriteriaReport criteria_report(const SpectralDensity& sd, const CriteriaConfig& cfg) {
  cfg.validate();
  CriteriaReport rep;
  rep.config = cfg;
  for (const SlqRun& run : sd.runs) {
    CriteriaSample s{run.batch, run.run, 0, {}, 0};
    try {
      s.r_e = r_e(run.ritz, run.weights, cfg.zero_band);
      for (double n : cfg.exponents) s.k_h.push_back(k_h(run.ritz, run.weights, n, cfg.zero_band, cfg.placement));
      s.negative_mass = negative_mass(run.ritz, run.weights, cfg.zero_band);
    } catch (const NoPositiveSpectrum& e) {
      throw NoPositiveSpectrum(std::string(e.what()) + " (batch " + std::to_string(run.batch) + ", run " +
                               std::to_string(run.run) + ")");
    }
    rep.samples.push_back(std::move(s));
  }
  if (rep.samples.empty()) return rep;

  auto aggregate = [&](const std::string& name, auto value) {
    Aggregate a{0, value(rep.samples[0]), value(rep.samples[0])};
    for (const auto& s : rep.samples) {
      const double v = value(s);
      a.mean += v;
      a.min = std::min(a.min, v);
      a.max = std::max(a.max, v);
    }
    a.mean /= static_cast<double>(rep.samples.size());
    rep.aggregates[name] = a;
  };
  aggregate("r_e", [](const CriteriaSample& s) { return s.r_e; });
  for (size_t k = 0; k < cfg.exponents.size(); ++k) {
    aggregate(k_h_name(cfg.exponents[k]), [k](const CriteriaSample& s) { return s.k_h[k]; });
  }
  aggregate("negative_mass", [](const CriteriaSample& s) { return s.negative_mass; });
  return rep;
}

std::vector<Batch> protocol_batches(const Dataset& ds, const CriteriaConfig& cfg) {
  cfg.validate();
  if (ds.size() < cfg.batch_count * cfg.batch_size) {
    throw EmptyDataset("dataset '" + ds.name + "' has " + std::to_string(ds.size()) + " samples, the protocol needs " +
                       std::to_string(cfg.batch_count) + " batches of " + std::to_string(cfg.batch_size));
  }
  auto idx = batch_indices(ds.size(), cfg.batch_size, derive_seed(cfg.master_seed, {3}));
  idx.resize(static_cast<size_t>(cfg.batch_count));
  std::vector<Batch> out;
  for (const auto& i : idx) out.push_back(ds.gather(i));
  return out;
}

CriteriaReport stability_protocol(const ModelSpec& spec, const ParamVector& params, const Dataset& ds, Mode mode,
                                  const SlqConfig& slq, const CriteriaConfig& cfg) {
  const std::vector<Batch> batches = protocol_batches(ds, cfg);
  SlqConfig run_cfg = slq;
  run_cfg.n_hes = cfg.n_hes;
  run_cfg.seed = cfg.master_seed;
  CriteriaReport rep = criteria_report(hesd(spec, params, batches, mode, run_cfg), cfg);
  double acc = 0;
  for (const Batch& b : batches) acc += accuracy(spec, params, b, mode);
  rep.accuracy_on_batches = acc / static_cast<double>(batches.size());
  return rep;
}

std::string criteria_csv(const CriteriaReport& report) {
  std::string out = "batch,run,r_e";
  for (double n : report.config.exponents) out += "," + k_h_name(n);
  out += "\n";
  char buf[64];
  for (const auto& s : report.samples) {
    out += std::to_string(s.batch) + "," + std::to_string(s.run);
    std::snprintf(buf, sizeof buf, ",%.9g", s.r_e);
    out += buf;
    for (double k : s.k_h) {
      std::snprintf(buf, sizeof buf, ",%.9g", k);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace hesscope
