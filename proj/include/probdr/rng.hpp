#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace probdr {

// SplitMix64 finaliser step; used for seeding and sub-stream derivation.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent sub-stream seed from a root seed and a chain of
// integer keys: s = root; for each key k: s = mix(s ^ mix(k)).
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys);

// FNV-1a 64-bit hash, for turning stream names ("train", "val") into keys.
std::uint64_t stream_key(std::string_view name);

// xoshiro256** generator, state filled from the seed by four SplitMix64 draws.
//
// uniform():  (next() >> 11) * 2^-53, in [0, 1).
// below(m):   high 64 bits of next() * m, in [0, m).
// gaussian(): Box-Muller on u1 = 1 - uniform(), u2 = uniform();
//             emits sqrt(-2 ln u1) cos(2 pi u2) then the cached sin partner.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  std::uint64_t below(std::uint64_t bound);
  double gaussian();

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace probdr
