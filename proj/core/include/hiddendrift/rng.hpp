#pragma once

#include <cstdint>

namespace hiddendrift {

/// Deterministic per-stream random generator (xoshiro256++ seeded via splitmix64).
///
/// Each simulated path draws from its own stream derived from (seed, path_index),
/// so results do not depend on evaluation order. Normal variates use Box-Muller
/// on top of the raw 64-bit output, keeping bundles bit-identical for a given
/// seed independent of the platform's std::normal_distribution.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { init(seed); }
  Rng(std::uint64_t seed, std::uint64_t stream) { init(mix(seed) ^ mix(0x9E3779B97F4A7C15ULL * (stream + 1))); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in (0, 1).
  double next_uniform() {
    // 53-bit mantissa; offset by half an ulp to avoid exactly 0.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  /// Standard normal variate.
  double next_normal();

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  void init(std::uint64_t seed) {
    std::uint64_t z = seed;
    for (auto& s : s_) {
      z = mix(z);
      s = z;
    }
    has_spare_ = false;
  }

  std::uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hiddendrift
