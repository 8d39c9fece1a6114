#pragma once

#include <functional>
#include <vector>

#include "hesscope/data.hpp"
#include "hesscope/models.hpp"
#include "hesscope/params.hpp"

namespace hesscope {

/// A symmetric linear operator given only through its action, H·v.
using HvpOracle = std::function<FlatVector(const FlatVector&)>;

/// Oracle for the loss Hessian of the model on one batch.
HvpOracle model_hvp_oracle(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode);

// Power iteration --------------------------------------------------------------------

struct PowerConfig {
  int max_iters = 100;
  /// Stop once the Rayleigh quotient changes by less than tol relative to its value.
  double tol = 1e-3;
  uint64_t seed = 0;
};

struct Eigenpair {
  double value = 0.0;
  FlatVector vector;  // unit norm; value is its Rayleigh quotient
  bool converged = false;
  int iterations = 0;
};

/// Largest-magnitude eigenpair, iterating in the orthogonal complement of `deflate`
/// (orthonormal vectors). Never throws on non-convergence; the flag says so.
Eigenpair power_iteration(const HvpOracle& op, int64_t dim, const PowerConfig& cfg,
                          const std::vector<FlatVector>& deflate = {});

/// The `count` algebraically largest eigenpairs, by power iteration with deflation; a
/// negative dominant eigenvalue is handled by re-running on H − µ·I.
std::vector<Eigenpair> top_eigenpairs(const HvpOracle& op, int64_t dim, int count, const PowerConfig& cfg);

struct ExtremeEigs {
  double lambda_max = 0.0, lambda_min = 0.0;
  bool converged = false;
};

/// λmax and λmin. The dominant eigenvalue µ fixes one end; the other comes from power
/// iteration on the positive semidefinite shift (µ·I − H or H − µ·I).
ExtremeEigs extreme_eigs(const HvpOracle& op, int64_t dim, const PowerConfig& cfg);

// Lanczos ------------------------------------------------------------------------------

struct TridiagonalEigen {
  std::vector<double> values;        // ascending
  std::vector<double> first_row;     // first component of each unit eigenvector
};

/// Implicit QL on a symmetric tridiagonal matrix (diag, off-diagonal of length n − 1).
TridiagonalEigen tridiagonal_eigen(std::vector<double> diag, std::vector<double> offdiag);

struct LanczosResult {
  std::vector<double> ritz;     // ascending
  std::vector<double> weights;  // squared first components, summing to 1
  int steps = 0;                // < m after breakdown
  double orthogonality_loss = 0.0;  // max |⟨q_i, q_j⟩|, i ≠ j
  std::vector<double> alpha, beta;
};

inline constexpr double kLanczosBreakdown = 1e-10;

/// m-step Lanczos from a unit Rademacher start vector, fully reorthogonalized.
LanczosResult lanczos(const HvpOracle& op, int64_t dim, int m, uint64_t seed);

// Spectral density ---------------------------------------------------------------------

struct SlqConfig {
  int lanczos_steps = 80;
  int n_hes = 10;
  uint64_t seed = 0;
  double sigma_factor = 0.01;
  int grid_points = 1024;

  void validate() const;
};

struct SlqRun {
  int batch = 0, run = 0;
  std::vector<double> ritz, weights;
  double orthogonality_loss = 0.0;
};

struct SpectralDensity {
  std::vector<SlqRun> runs;
  double lambda_min = 0.0, lambda_max = 0.0;
  double sigma = 0.0;
  std::vector<double> grid, density;
};

/// Seed of SLQ run r on batch b; depends only on (master, b, r).
uint64_t slq_seed(uint64_t master, int batch, int run);

/// n_hes runs per oracle, then the Gaussian-broadened density averaged over all runs.
SpectralDensity hesd(const std::vector<HvpOracle>& oracles, int64_t dim, const SlqConfig& cfg);
SpectralDensity hesd(const ModelSpec& spec, const ParamVector& params, const std::vector<Batch>& batches, Mode mode,
                     const SlqConfig& cfg);

/// Mean over runs of Σ τ_i N(λ; λ_i, σ²) on a uniform grid over [λmin − 0.05·w, λmax + 0.05·w].
void broaden(SpectralDensity& sd, const SlqConfig& cfg);

// Trace --------------------------------------------------------------------------------

struct TraceEstimate {
  double estimate = 0.0;
  double std_error = 0.0;  // 0 for a single sample
  int samples = 0;
};

TraceEstimate trace_hutchinson(const HvpOracle& op, int64_t dim, int n_samples, uint64_t seed);

}  // namespace hesscope
