#pragma once

#include <cstdint>
#include <string_view>

namespace opcorr {

// Counter-based seed derivation: every consumer of randomness gets its own
// stream keyed by (root seed, purpose tag, index), so parallel generation
// order cannot change results.
uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index);

// Small deterministic generator (splitmix64 core). The distributions are
// implemented here rather than with <random> so that streams are
// bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // standard normal via Box-Muller
  double normal();
  // uniform integer in [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi);

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace opcorr
