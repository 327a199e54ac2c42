#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fcrec {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Derives an independent generator from a root seed, a stream name and up to
// three integer coordinates (e.g. user, block, round). Streams with different
// names never share state, so toggling one mechanism leaves the others' draws
// untouched.
inline Rng make_stream(std::uint64_t root, std::string_view name, std::uint64_t a = 0,
                       std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = detail::splitmix64(root ^ detail::fnv1a(name));
  h = detail::splitmix64(h ^ a);
  h = detail::splitmix64(h ^ (b * 0x9e3779b97f4a7c15ULL));
  h = detail::splitmix64(h ^ (c * 0xc2b2ae3d27d4eb4fULL));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

// Uniform double in [0, 1) from 53 random bits; unlike
// std::uniform_real_distribution the result is identical across standard
// libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Unbiased integer in [0, n) (Lemire's rejection method), portable across
// standard libraries.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = -n % n;
  for (;;) {
    const std::uint64_t x = rng();
    const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
    if (static_cast<std::uint64_t>(m) >= limit) return static_cast<std::uint64_t>(m >> 64);
  }
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace fcrec
