#pragma once

#include <cstdint>

namespace fedmpdd {

inline constexpr std::uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer (Steele/Lea/Flood; Vigna's fixed-increment variant).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic word stream. Every consumer of randomness in this project
// owns one of these, seeded through derive_key, so runs replay exactly.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}

  std::uint64_t next() { return mix64(state_ += kSplitMixGamma); }

  // Uniform on (0,1), strictly inside the interval so log() is safe.
  double next_unit() {
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Consumes exactly two words per call;
  // the sine branch is discarded to keep the word count per draw fixed.
  double next_gaussian();

  // Zero-mean Laplace with the given scale (variance 2*scale^2).
  double next_laplace(double scale);

 private:
  std::uint64_t state_;
};

// Stable derivation of independent stream keys. Chaining derive_key over
// (master_seed, purpose, round, client, ...) gives every random decision in
// an experiment its own replayable stream.
inline std::uint64_t derive_key(std::uint64_t key, std::uint64_t word) {
  return mix64(key + (word + 1) * kSplitMixGamma);
}

// Purpose tags for derive_key chains. Distinct tags keep streams disjoint.
namespace purpose {
inline constexpr std::uint64_t kClientSample = 1;
inline constexpr std::uint64_t kWireSeed = 2;
inline constexpr std::uint64_t kQsgd = 3;
inline constexpr std::uint64_t kLdp = 4;
inline constexpr std::uint64_t kBatchPerm = 5;
inline constexpr std::uint64_t kModelInit = 6;
inline constexpr std::uint64_t kData = 7;
inline constexpr std::uint64_t kAttack = 8;
}  // namespace purpose

// 32-bit wire seed for round k, client i. Both parties can re-derive it.
inline std::uint32_t wire_seed_for(std::uint64_t master_seed, std::uint64_t round,
                                   std::uint64_t client) {
  std::uint64_t key = derive_key(master_seed, purpose::kWireSeed);
  key = derive_key(key, round);
  key = derive_key(key, client);
  return static_cast<std::uint32_t>(key >> 32);
}

}  // namespace fedmpdd
