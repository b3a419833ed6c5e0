#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace atm {

// Deterministic stream RNG. Distributions are implemented by hand so that a
// (seed, stream) pair yields the same draws on every platform and compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // warm up past trivially correlated initial states
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on the open interval (0, 1).
  double uniform() {
    for (;;) {
      double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
      if (u > 0.0 && u < 1.0) return u;
    }
  }

  // Standard normal via Box-Muller; always consumes two uniforms.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Standard Gumbel(0, 1): -log(-log u).
  double gumbel() { return -std::log(-std::log(uniform())); }

  // Uniform integer in [0, n), n >= 1.
  std::uint64_t integer(std::uint64_t n) {
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::uint64_t state_;
};

// Mixes a global seed, a class id, and a stream tag into one child seed so
// every rng stream of a run is fully determined by (global_seed, class_id).
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t class_id,
                                 std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  };
  mix(global_seed);
  mix(class_id);
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Rng derive_rng(std::uint64_t global_seed, std::uint64_t class_id,
                      std::string_view stream) {
  return Rng(derive_seed(global_seed, class_id, stream));
}

}  // namespace atm
