#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dforge {

// Seed scheme: every stream is derived from the run seed by mixing in a
// stream tag and up to two counters with splitmix64, e.g.
//   derive_seed(run_seed, "pairs", step)
//   derive_seed(run_seed, "iacc", step, slot)
// so any single consumer can be replayed without running the others.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
  uint64_t s = splitmix64(base ^ hash_tag(tag));
  s = splitmix64(s ^ a);
  return splitmix64(s ^ (b * 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

}  // namespace dforge
