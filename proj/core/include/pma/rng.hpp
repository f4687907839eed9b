// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams. Every consumer derives its own stream from
// (seed, tag, index) so that e.g. the batch for step 1234 is reproducible
// without replaying steps 0..1233 — this is what makes forked runs bit-exact.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace pma {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal, Marsaglia polar method with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Uniform integer in [0, n), rejection sampled (no modulo bias).
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Independent stream keyed by (seed, tag, index).
inline Rng stream_rng(uint64_t seed, std::string_view tag, uint64_t index = 0) {
  uint64_t h = seed;
  for (char c : tag) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    splitmix64(h);
  }
  h ^= 0x51ed2701a3c4d5e6ULL ^ index;
  uint64_t state = h;
  return Rng(splitmix64(state));
}

}  // namespace pma
