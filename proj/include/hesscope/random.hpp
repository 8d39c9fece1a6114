#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace hesscope {

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for a (master, index...) tuple; order of the parts matters.
inline uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> parts) {
  uint64_t h = splitmix64(master);
  for (uint64_t p : parts) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Uniform on [0, 1) with 53 random bits; independent of the standard library's distribution code.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double rademacher(Rng& rng) { return (rng() >> 63) ? 1.0 : -1.0; }

/// Standard normal via Box-Muller, so streams are identical across standard libraries.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace hesscope
