#pragma once

#include <cstdint>
#include <random>

#include "dimbert/error.hpp"

namespace dimbert {

// Deterministic random source. All derived quantities (uniform, gaussian,
// bounded ints) are built from the standardized mt19937_64 bit stream using
// only IEEE +,-,*,/ so the same seed yields the same bytes on every platform.
// Transcendental-based samplers (Box-Muller etc.) are avoided on purpose:
// libm is not bit-reproducible across implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution, exactly representable.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound) {
    require(bound > 0, ErrorCode::invalid_argument, "rng bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r < limit) return r % bound;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Approximate standard normal: sum of 12 uniforms minus 6. Range [-6, 6],
  // exact moments 0/1, and fully portable. Quality is ample for feature
  // noise and parameter init at this scale.
  double gaussian() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

  double gaussian(double sigma) { return gaussian() * sigma; }

  // splitmix64 finalizer; used to derive independent streams.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  Rng derive(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace dimbert
