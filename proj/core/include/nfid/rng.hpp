#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace nfid {

/// Seed of the named sub-stream `name` under `root`. Every random draw in the
/// library flows from one root seed through these streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

/// Portable generator: mt19937_64 plus hand-written distributions, so seeded
/// output does not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), n > 0 (rejection sampling, no modulo bias).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Box-Muller).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nfid
