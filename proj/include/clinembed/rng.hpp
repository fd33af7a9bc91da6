#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

namespace clinembed {

// Derives an independent stream seed from a base seed and a stream tag
// (splitmix64 finalizer).
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// mt19937-backed generator. Uniform and normal variates are derived from raw
// 32-bit draws instead of std:: distributions so streams are identical across
// standard library implementations; checkpoints and stores stay byte-stable.
class Rng {
 public:
  explicit Rng(uint64_t seed)
      : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  uint32_t next_u32() { return gen_(); }

  // Uniform in [0, 1) with 24 bits of precision.
  double uniform() {
    return static_cast<double>(next_u32() >> 8) * 0x1p-24;
  }

  // Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
  size_t uniform_index(size_t n) {
    const uint64_t span = 0x100000000ULL;
    uint64_t limit = span - span % n;
    uint64_t draw;
    do {
      draw = next_u32();
    } while (draw >= limit);
    return static_cast<size_t>(draw % n);
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  // Fisher-Yates shuffle driven by uniform_index.
  template <typename It>
  void shuffle(It first, It last) {
    size_t n = static_cast<size_t>(last - first);
    for (size_t i = n; i > 1; --i) {
      size_t j = uniform_index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace clinembed
