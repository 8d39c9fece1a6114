#include "hesscope/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hesscope/random.hpp"

namespace hesscope {

HvpOracle model_hvp_oracle(const ModelSpec& spec, const ParamVector& params, const Batch& batch, Mode mode) {
  auto loss_fn = make_loss<float>(spec, batch, mode);
  return [loss_fn, params](const FlatVector& v) { return hvp(loss_fn, params, v); };
}

namespace {

FlatVector checked_apply(const HvpOracle& op, const FlatVector& v) {
  FlatVector out = op(v);
  if (out.size() != v.size()) {
    throw OracleFailure("operator returned length " + std::to_string(out.size()) + " for input length " +
                        std::to_string(v.size()));
  }
  if (!out.allFinite()) throw OracleFailure("operator returned non-finite values");
  return out;
}

void project_out(FlatVector& v, const std::vector<FlatVector>& basis) {
  for (const auto& q : basis) v -= q.dot(v) * q;
}

HvpOracle shifted(const HvpOracle& op, double scale, double shift) {
  // v ↦ scale·H v + shift·v
  return [op, scale, shift](const FlatVector& v) -> FlatVector { return scale * op(v) + shift * v; };
}

}  // namespace

Eigenpair power_iteration(const HvpOracle& op, int64_t dim, const PowerConfig& cfg,
                          const std::vector<FlatVector>& deflate) {
  Rng rng(cfg.seed);
  NormalSampler normal;
  FlatVector v(dim);
  for (int64_t i = 0; i < dim; ++i) v[i] = normal(rng);
  project_out(v, deflate);
  v.normalize();

  Eigenpair best;
  best.vector = v;
  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= cfg.max_iters; ++it) {
    FlatVector w = checked_apply(op, v);
    const double lambda = v.dot(w);
    best = {lambda, v, false, it};
    project_out(w, deflate);
    project_out(w, deflate);
    const double norm = w.norm();
    if (norm == 0.0 || (it > 1 && std::abs(lambda - previous) <= cfg.tol * std::abs(lambda))) {
      best.converged = true;
      break;
    }
    previous = lambda;
    v = w / norm;
  }
  return best;
}

namespace {

/// Algebraically largest eigenpair in the complement of `deflate`.
Eigenpair algebraic_top(const HvpOracle& op, int64_t dim, const PowerConfig& cfg, const std::vector<FlatVector>& deflate) {
  Eigenpair p = power_iteration(op, dim, cfg, deflate);
  if (p.value >= 0) return p;
  // Dominant eigenvalue is negative: H − µ·I is positive semidefinite with the same eigenvectors.
  PowerConfig again = cfg;
  again.seed = derive_seed(cfg.seed, {1});
  Eigenpair q = power_iteration(shifted(op, 1.0, -p.value), dim, again, deflate);
  q.value += p.value;
  q.converged = q.converged && p.converged;
  q.iterations += p.iterations;
  return q;
}

}  // namespace

std::vector<Eigenpair> top_eigenpairs(const HvpOracle& op, int64_t dim, int count, const PowerConfig& cfg) {
  std::vector<Eigenpair> out;
  std::vector<FlatVector> found;
  for (int k = 0; k < count; ++k) {
    PowerConfig c = cfg;
    c.seed = derive_seed(cfg.seed, {uint64_t(k)});
    Eigenpair e = algebraic_top(op, dim, c, found);
    found.push_back(e.vector);
    out.push_back(std::move(e));
  }
  return out;
}

ExtremeEigs extreme_eigs(const HvpOracle& op, int64_t dim, const PowerConfig& cfg) {
  const Eigenpair mu = power_iteration(op, dim, cfg);
  PowerConfig c = cfg;
  c.seed = derive_seed(cfg.seed, {1});
  ExtremeEigs out;
  if (mu.value >= 0) {
    const Eigenpair other = power_iteration(shifted(op, -1.0, mu.value), dim, c);
    out = {mu.value, mu.value - other.value, mu.converged && other.converged};
  } else {
    const Eigenpair other = power_iteration(shifted(op, 1.0, -mu.value), dim, c);
    out = {mu.value + other.value, mu.value, mu.converged && other.converged};
  }
  return out;
}

TridiagonalEigen tridiagonal_eigen(std::vector<double> d, std::vector<double> offdiag) {
  const int n = static_cast<int>(d.size());
  if (n == 0) return {};
  if (static_cast<int>(offdiag.size()) != n - 1) throw DimensionMismatch("tridiagonal off-diagonal must have n - 1 entries");
  std::vector<double> e(offdiag);
  e.push_back(0.0);
  // Only the first row of the eigenvector matrix is accumulated; rotations act on
  // columns, so row 0 evolves independently of the others.
  std::vector<double> z(static_cast<size_t>(n), 0.0);
  z[0] = 1.0;
  const double eps = std::numeric_limits<double>::epsilon();

  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
        if (std::abs(e[m]) <= eps * dd) break;
      }
      if (m != l) {
        if (iter++ == 60) throw OracleFailure("tridiagonal QL did not converge");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        int i;
        for (i = m - 1; i >= l; --i) {
          double f = s * e[i];
          const double b = c * e[i];
          e[i + 1] = (r = std::hypot(f, g));
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          d[i + 1] = g + (p = s * r);
          g = c * r - b;
          f = z[i + 1];
          z[i + 1] = s * z[i] + c * f;
          z[i] = c * z[i] - s * f;
        }
        if (r == 0.0 && i >= l) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  TridiagonalEigen out;
  for (int k : order) {
    out.values.push_back(d[k]);
    out.first_row.push_back(z[k]);
  }
  return out;
}

LanczosResult lanczos(const HvpOracle& op, int64_t dim, int m, uint64_t seed) {
  if (m < 1) throw ConfigError("lanczos needs at least one step");
  if (dim < 1) throw DimensionMismatch("lanczos on an empty space");
  m = static_cast<int>(std::min<int64_t>(m, dim));

  Rng rng(seed);
  std::vector<FlatVector> q;
  q.reserve(static_cast<size_t>(m));
  FlatVector start(dim);
  for (int64_t i = 0; i < dim; ++i) start[i] = rademacher(rng);
  q.push_back(start / std::sqrt(static_cast<double>(dim)));

  LanczosResult out;
  for (int j = 0; j < m; ++j) {
    FlatVector w = checked_apply(op, q[j]);
    const double a = q[j].dot(w);
    out.alpha.push_back(a);
    w -= a * q[j];
    if (j > 0) w -= out.beta[j - 1] * q[j - 1];
    // Full reorthogonalization, twice ("twice is enough").
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& qi : q) w -= qi.dot(w) * qi;
    }
    if (j + 1 == m) break;
    const double b = w.norm();
    if (b < kLanczosBreakdown) break;
    out.beta.push_back(b);
    q.push_back(w / b);
  }
  out.steps = static_cast<int>(out.alpha.size());

  for (size_t i = 0; i < q.size(); ++i) {
    for (size_t j = 0; j < i; ++j) out.orthogonality_loss = std::max(out.orthogonality_loss, std::abs(q[i].dot(q[j])));
  }

  const TridiagonalEigen te = tridiagonal_eigen(out.alpha, out.beta);
  out.ritz = te.values;
  for (double z0 : te.first_row) out.weights.push_back(z0 * z0);
  return out;
}

void SlqConfig::validate() const {
  if (lanczos_steps < 2) throw ConfigError("slq.lanczos_steps must be >= 2");
  if (n_hes < 1) throw ConfigError("slq.n_hes must be >= 1");
  if (!(sigma_factor > 0)) throw ConfigError("slq.sigma_factor must be > 0");
  if (grid_points < 2) throw ConfigError("slq.grid_points must be >= 2");
}

uint64_t slq_seed(uint64_t master, int batch, int run) {
  return derive_seed(master, {uint64_t(batch), uint64_t(run)});
}

void broaden(SpectralDensity& sd, const SlqConfig& cfg) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : sd.runs) {
    for (double x : r.ritz) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (sd.runs.empty() || !std::isfinite(lo)) throw OracleFailure("no Ritz values to broaden");
  sd.lambda_min = lo;
  sd.lambda_max = hi;
  double width = hi - lo;
  // A single distinct eigenvalue still needs a positive bandwidth.
  if (!(width > 0)) width = std::max(1.0, std::abs(hi));
  sd.sigma = cfg.sigma_factor * width;
  const double margin = 0.05 * width;
  const double start = lo - margin, stop = hi + margin;
  const int n = cfg.grid_points;
  sd.grid.resize(static_cast<size_t>(n));
  sd.density.assign(static_cast<size_t>(n), 0.0);
  const double norm = 1.0 / (sd.sigma * std::sqrt(2.0 * M_PI) * static_cast<double>(sd.runs.size()));
  for (int g = 0; g < n; ++g) {
    const double x = start + (stop - start) * g / (n - 1);
    sd.grid[g] = x;
    double acc = 0.0;
    for (const auto& r : sd.runs) {
      for (size_t i = 0; i < r.ritz.size(); ++i) {
        const double z = (x - r.ritz[i]) / sd.sigma;
        acc += r.weights[i] * std::exp(-0.5 * z * z);
      }
    }
    sd.density[g] = acc * norm;
  }
}

SpectralDensity hesd(const std::vector<HvpOracle>& oracles, int64_t dim, const SlqConfig& cfg) {
  cfg.validate();
  if (oracles.empty()) throw EmptyDataset("hesd needs at least one batch");
  SpectralDensity sd;
  for (size_t b = 0; b < oracles.size(); ++b) {
    for (int r = 0; r < cfg.n_hes; ++r) {
      LanczosResult lr;
      try {
        lr = lanczos(oracles[b], dim, cfg.lanczos_steps, slq_seed(cfg.seed, static_cast<int>(b), r));
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(e.value(), "SLQ batch " + std::to_string(b) + ", run " + std::to_string(r));
      } catch (const OracleFailure& e) {
        throw OracleFailure(std::string(e.what()) + " (SLQ batch " + std::to_string(b) + ", run " + std::to_string(r) + ")");
      }
      sd.runs.push_back({static_cast<int>(b), r, std::move(lr.ritz), std::move(lr.weights), lr.orthogonality_loss});
    }
  }
  broaden(sd, cfg);
  return sd;
}

SpectralDensity hesd(const ModelSpec& spec, const ParamVector& params, const std::vector<Batch>& batches, Mode mode,
                     const SlqConfig& cfg) {
  std::vector<HvpOracle> oracles;
  for (const auto& b : batches) oracles.push_back(model_hvp_oracle(spec, params, b, mode));
  return hesd(oracles, params.total_len(), cfg);
}

TraceEstimate trace_hutchinson(const HvpOracle& op, int64_t dim, int n_samples, uint64_t seed) {
  if (n_samples < 1) throw ConfigError("trace_hutchinson needs at least one sample");
  Rng rng(seed);
  double mean = 0.0, m2 = 0.0;  // Welford
  FlatVector v(dim);
  for (int k = 1; k <= n_samples; ++k) {
    for (int64_t i = 0; i < dim; ++i) v[i] = rademacher(rng);
    const double x = v.dot(checked_apply(op, v));
    const double delta = x - mean;
    mean += delta / k;
    m2 += delta * (x - mean);
  }
  TraceEstimate out{mean, 0.0, n_samples};
  if (n_samples > 1) out.std_error = std::sqrt(m2 / (n_samples - 1) / n_samples);
  return out;
}

}  // namespace hesscope
