#pragma once

// Random streams used throughout the library.
//
// Engine: xoshiro256++ (Blackman & Vigna), seeded by expanding a 64-bit seed
// through SplitMix64. Independent streams are derived by hashing
// (master_seed, stream, index) with SplitMix64 finalizers, so trajectory j of
// an ensemble always sees the same stream regardless of thread layout.
// Distributions come from boost::random, whose algorithms are fixed across
// platforms (unlike std:: distributions).

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <array>
#include <cstdint>
#include <limits>

namespace sgdfluct {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream seed for (master, stream, index). Pure function.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64_next(s);
  s = h ^ (stream * 0xd1b54a32d192ed03ULL);
  h = splitmix64_next(s);
  s = h ^ (index * 0x8cb92ba72f3d8dd7ULL);
  return splitmix64_next(s);
}

/// xoshiro256++ 1.0. Satisfies UniformRandomBitGenerator.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64_next(sm);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
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

  friend bool operator==(const Xoshiro256pp&, const Xoshiro256pp&) = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

using Engine = Xoshiro256pp;

/// Standard normal draw.
template <class Eng>
inline double standard_normal(Eng& eng) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(eng);
}

template <class Eng>
inline double uniform01(Eng& eng) {
  boost::random::uniform_01<double> dist;
  return dist(eng);
}

template <class Eng>
inline std::uint64_t uniform_index(Eng& eng, std::uint64_t n) {
  boost::random::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(eng);
}

/// Fisher-Yates shuffle driven by boost's uniform_int (portable, unlike std::shuffle).
template <class It, class Eng>
void portable_shuffle(It first, It last, Eng& eng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(eng, i);
    std::swap(first[i - 1], first[j]);
  }
}

// Stream tags for derive_seed.
namespace stream {
inline constexpr std::uint64_t kTrajectory = 1;
inline constexpr std::uint64_t kPool = 2;
inline constexpr std::uint64_t kBootstrap = 3;
inline constexpr std::uint64_t kLanczos = 4;
inline constexpr std::uint64_t kLandscape = 5;
inline constexpr std::uint64_t kMeasurement = 6;
}  // namespace stream

}  // namespace sgdfluct
