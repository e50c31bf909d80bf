#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace indexflow {

// SplitMix64 finalizer; whitens seeds and derives independent sub-streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for an independent sub-stream of (seed, stream), e.g. one per
/// sweep repetition.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x517CC1B727220A95ULL));
}

/// Seedable random source used by every stochastic operation.
///
/// mt19937_64 is bit-reproducible across platforms by the standard; the
/// Gaussian transform is an explicit Box-Muller (std::normal_distribution
/// is implementation-defined, which would break byte-identical outputs).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  /// Independent stream derived from (seed, stream), e.g. one per sweep rep.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(derive_seed(seed, stream));
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform on [-1, 1].
  double uniform_sym() { return 2.0 * uniform() - 1.0; }

  /// Standard normal via Box-Muller with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925287;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace indexflow
