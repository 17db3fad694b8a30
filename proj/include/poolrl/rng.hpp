#pragma once
// Deterministic RNG streams.
//
// Every stochastic component draws from its own substream derived from
// (root seed, a few integer labels). Substreams are positional: nothing ever
// shares a generator, so checkpoint/resume and the --threads worker count
// cannot change results.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace poolrl {

// splitmix64: the standard 64-bit finalizer/stream mixer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a for turning string labels (problem ids, stage names) into stream keys.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Mixes a seed with an ordered list of labels into one substream key.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> labels) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t v : labels) h = splitmix64(h ^ v);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> labels = {}) {
  return std::mt19937_64(derive_seed(seed, labels));
}

}  // namespace poolrl
