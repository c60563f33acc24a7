#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace lbv {

/// PCG32 (XSH-RR variant, O'Neill). Chosen for portability: same seed gives
/// the same stream on every platform, and the reference outputs are public.
class Pcg32 {
 public:
  static constexpr std::uint64_t kDefaultStream = 54u;

  explicit Pcg32(std::uint64_t seed = 0x853c49e6748fea9bULL,
                 std::uint64_t stream = kDefaultStream)
      : seed_(seed) {
    inc_ = (stream << 1u) | 1u;
    state_ = 0u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  /// Uniform double in [0, 1).
  double uniform() { return next_u32() * 0x1p-32; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n), n >= 1. Simple scaled draw; bias is < 2^-32 per call,
  /// irrelevant for shuffling and sampling at our scales.
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller (two uniform draws per value).
  double normal() {
    const double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent child generator derived from the *construction seed* and a
  /// caller-chosen key, so parallel workers get stable streams regardless of
  /// how much the parent has advanced.
  Pcg32 child(std::uint64_t key) const {
    return Pcg32(mix64(seed_ ^ (0x9e3779b97f4a7c15ULL * (key + 1))), key + 1);
  }

  std::uint64_t seed() const { return seed_; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::int64_t>(last - first);
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j = below(i + 1);
      std::swap(first[i], first[j]);
    }
  }

 private:
  // splitmix64 finalizer.
  static std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  std::uint64_t seed_ = 0;
};

/// n uniform draws in [0,1).
inline std::vector<double> rng_uniform(Pcg32& rng, std::int64_t n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = rng.uniform();
  return out;
}

}  // namespace lbv
