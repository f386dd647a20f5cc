#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace hublab {

// FNV-1a over the bytes of `text`.
constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for the random stream named `purpose` under experiment seed `seed`.
// Streams are independent of each other, so adding a consumer never shifts
// an existing one.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose) {
  return splitmix64(fnv1a(purpose) ^ splitmix64(seed));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view purpose) {
  return Rng(stream_seed(seed, purpose));
}

// Uniform double in [0, 1) with a fixed bit recipe; std distributions are not
// portable across standard libraries, this is.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// Standard normal via Box-Muller.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace hublab
