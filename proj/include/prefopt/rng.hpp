#pragma once

/**
 * rng.hpp - Deterministic random number generation
 *
 * std::mt19937_64 is bit-exact across platforms but the standard
 * distributions are not, so uniform/normal/categorical draws are implemented
 * here directly on top of the engine. Substreams are derived by splitmix64
 * mixing so independent components (per prompt, per item) can draw without
 * sharing state or depending on call order.
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "errors.hpp"

namespace prefopt {

/** One step of the splitmix64 generator; also used to mix seeds. */
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/** Hashes a seed and a stream tag into a fresh seed. */
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ull + tag * 0x9E3779B97F4A7C15ull);
  std::uint64_t a = splitmix64_next(s);
  std::uint64_t b = splitmix64_next(s);
  return a ^ (b << 1);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed), seed_of_(seed) {}

  /** Child generator for an independent, order-insensitive substream. */
  Rng substream(std::uint64_t tag) const { return Rng(mix_seed(seed_of_, tag)); }

  std::uint64_t next_u64() { return eng_(); }

  /** Uniform double in [0, 1) with 53 random bits. */
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /** Standard normal via Box-Muller; the spare value is cached. */
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // NOTE: 1 - u keeps the log argument in (0, 1], avoiding log(0).
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;  // 2*pi
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /** Uniform index in [0, n). */
  std::size_t uniform_index(std::size_t n) {
    require(n > 0, "Rng::uniform_index: n must be positive");
    std::size_t i = static_cast<std::size_t>(uniform01() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  /**
   * Draws an index with probability proportional to weights[i] (inverse-CDF
   * walk). Weights must be nonnegative with a positive sum.
   */
  std::size_t categorical(const double* weights, std::size_t n) {
    require(n > 0, "Rng::categorical: n must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      require(weights[i] >= 0.0, "Rng::categorical: negative weight");
      total += weights[i];
    }
    require(total > 0.0, "Rng::categorical: weights sum to zero");
    const double u = uniform01() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    // NOTE: reachable only through rounding at the top of the CDF walk:
    // fall back to the last positively weighted index.
    for (std::size_t i = n; i-- > 0;)
      if (weights[i] > 0.0) return i;
    return n - 1;
  }

  std::size_t categorical(const std::vector<double>& weights) {
    return categorical(weights.data(), weights.size());
  }

 private:
  std::mt19937_64 eng_;
  std::uint64_t seed_of_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace prefopt
