#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hesscope/data.hpp"
#include "hesscope/spectral.hpp"

namespace hesscope {

/// Eq. 3 admits (Σ xᵢwᵢ)ⁿ as well as Σ (xᵢwᵢ)ⁿ; per_term is the latter.
enum class ExponentPlacement { per_term, outer };

std::string to_string(ExponentPlacement p);
ExponentPlacement exponent_placement_from_string(const std::string& name);

inline constexpr double kZeroBand = 1e-6;

struct CriteriaConfig {
  std::vector<double> exponents{1.0, 0.5};
  /// Ritz values with |λ| ≤ zero_band · max|λ| count as neither negative nor positive.
  double zero_band = kZeroBand;
  ExponentPlacement placement = ExponentPlacement::per_term;
  /// SLQ runs per batch; overrides SlqConfig::n_hes inside the protocol.
  int n_hes = 10;
  int batch_count = 4;
  int64_t batch_size = 64;
  uint64_t master_seed = 0;

  void validate() const;
};

/// Column/key name of K_Hn: "k_h" followed by n without its decimal point (1 → k_h1, 0.5 → k_h05).
std::string k_h_name(double n);

/// max|λ_neg| / max λ_pos after the zero band; 0 without negatives. Throws NoPositiveSpectrum.
double r_e(const std::vector<double>& ritz, const std::vector<double>& weights, double zero_band = kZeroBand);

/// Σ(|λ_neg,i| w_neg,i)ⁿ / Σ(λ_pos,j w_pos,j)ⁿ (or with the exponent outside the sums).
double k_h(const std::vector<double>& ritz, const std::vector<double>& weights, double n, double zero_band = kZeroBand,
           ExponentPlacement placement = ExponentPlacement::per_term);

/// Total weight on Ritz values below −zero_band · max|λ|.
double negative_mass(const std::vector<double>& ritz, const std::vector<double>& weights, double zero_band = kZeroBand);

struct CriteriaSample {
  int batch = 0, run = 0;
  double r_e = 0;
  std::vector<double> k_h;  // one per configured exponent
  double negative_mass = 0;
};

struct Aggregate {
  double mean = 0, min = 0, max = 0;
};

struct CriteriaReport {
  CriteriaConfig config;
  std::vector<CriteriaSample> samples;
  /// Keyed by "r_e", k_h_name(n) for each exponent, and "negative_mass".
  std::map<std::string, Aggregate> aggregates;
  std::optional<double> accuracy_on_batches;

  const Aggregate& at(const std::string& criterion) const;
};

/// Criteria for every run of a spectral density; NoPositiveSpectrum carries (batch, run).
CriteriaReport criteria_report(const SpectralDensity& sd, const CriteriaConfig& cfg);

/// The batch_count batches the protocol draws from ds for master_seed.
std::vector<Batch> protocol_batches(const Dataset& ds, const CriteriaConfig& cfg);

/// N seeded batches × n_hes SLQ runs, criteria per (batch, run), then aggregates and the
/// accuracy on the same batches. SLQ run seeds derive from master_seed.
CriteriaReport stability_protocol(const ModelSpec& spec, const ParamVector& params, const Dataset& ds, Mode mode,
                                  const SlqConfig& slq, const CriteriaConfig& cfg);

/// `batch,run,r_e,k_h1,k_h05` (one k_h column per exponent), 9 significant digits.
std::string criteria_csv(const CriteriaReport& report);

}  // namespace hesscope
