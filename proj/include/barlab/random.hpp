#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace barlab {

/// SplitMix64 step. Used for seed expansion and stream derivation only.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream derivation: a stream is named by (master seed, tag, index).
///
/// The derived seed is two SplitMix64 rounds over the master seed perturbed
/// by the tag and then by the index, so replicate k of an experiment sees the
/// same stream whatever worker it runs on.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag,
                                    std::uint64_t index) noexcept {
  std::uint64_t s = master ^ (tag * 0xd1b54a32d192ed03ULL);
  std::uint64_t a = splitmix64(s);
  s = a ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  return splitmix64(s);
}

/// Stream tags. Each consumer of randomness in one replicate gets its own tag.
enum class StreamTag : std::uint64_t {
  Tree = 1,
  Population = 2,
  Extension = 3,
  Chain = 4,
  Coefficients = 5,
};

/// xoshiro256** engine. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0x2545f4914f6cdd1dULL) noexcept { reseed(seed); }

  Rng(std::uint64_t master, StreamTag tag, std::uint64_t index) noexcept
      : Rng(derive_seed(master, static_cast<std::uint64_t>(tag), index)) {}

  void reseed(std::uint64_t seed) noexcept {
    for (auto& w : s_) w = splitmix64(seed);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace barlab
