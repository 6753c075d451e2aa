#pragma once

// SplitMix64: a 64-bit counter-based generator (Steele, Lea, Flood 2014).
// state += 0x9E3779B97F4A7C15, then the output is mixed by
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z ^= z >> 31
// Doubles take the top 53 bits; normals come from Box-Muller on two
// consecutive uniforms (no cached spare), so streams are easy to reproduce
// in any language.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace raliflow {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// [0, n) by rejection, so every value is equally likely.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = next();
    while (x >= limit);
    return x % n;
  }

  double normal(double mean = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent stream for a sub-task, e.g. derive(seed, epoch).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    SplitMix64 g(seed ^ (salt * 0xD1B54A32D192ED03ULL));
    return g.next();
  }

 private:
  std::uint64_t state_;
};

}  // namespace raliflow
