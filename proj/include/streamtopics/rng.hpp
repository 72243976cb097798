#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>

namespace stm {

// Deterministic random source used everywhere in the library.
//
// The engine is std::mt19937_64, whose sequence is pinned by the C++
// standard, so a (seed, stream) pair reproduces bit-identical draws on any
// conforming platform. Distribution mapping is done by hand below because
// the standard <random> distributions are implementation-defined.
//
// Stream splitting: independent consumers derive their engine seed as
// splitmix64(seed ^ splitmix64(stream + 0x9e3779b97f4a7c15)). Components
// document the stream ids they claim; id 0 is the default.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ull))) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection; unbiased.
    std::uint64_t x = engine_();
    __uint128_t m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        x = engine_();
        m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint64_t next_raw() { return engine_(); }

  void save_state(std::ostream& os) const { os << engine_; }
  void load_state(std::istream& is) { is >> engine_; }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stm
