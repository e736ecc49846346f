#pragma once

#include <cstdint>

namespace corrmlp {

/// xoshiro256** seeded through splitmix64. Fully specified, so sequences are
/// identical on every platform (unlike the std:: distributions).
class Rng {
 public:
  static constexpr const char* kAlgorithm = "xoshiro256**/splitmix64";

  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (cached second value).
  double normal();
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);

 private:
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Independent sub-seed for a named stream of `seed`.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

}  // namespace corrmlp
