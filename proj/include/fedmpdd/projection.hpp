#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmpdd/rng.hpp"

namespace fedmpdd {

// Identifies a reproducible family of Rademacher directions. The same
// (wire_seed, directions, dim) regenerates bit-identical directions on the
// client and the server; only the seed and the projected scalars travel.
struct ProjectionSpec {
  std::uint32_t wire_seed = 0;
  std::size_t directions = 1;  // m
  std::size_t dim = 1;         // d
};

// Projected scalars for one client message: scalars[j] = u_j . grad.
struct MpddPayload {
  std::uint32_t wire_seed = 0;
  std::vector<double> scalars;
};

// Initial SplitMix64 state for direction j of a seed's family. Part of the
// wire contract: state0 = zero-extended wire_seed XOR ((j+1) * gamma).
inline std::uint64_t direction_stream_state(std::uint32_t wire_seed, std::size_t j) {
  return static_cast<std::uint64_t>(wire_seed) ^ ((j + 1) * kSplitMixGamma);
}

// Streams the entries of direction j of a seed's direction family without
// materializing it. Entries consume each SplitMix64 word LSB-first,
// bit 1 -> +1, bit 0 -> -1.
class RademacherStream {
 public:
  RademacherStream(std::uint32_t wire_seed, std::size_t j)
      : words_(direction_stream_state(wire_seed, j)) {}

  double next() {
    if (bits_left_ == 0) {
      word_ = words_.next();
      bits_left_ = 64;
    }
    const double entry = (word_ & 1u) ? 1.0 : -1.0;
    word_ >>= 1;
    --bits_left_;
    return entry;
  }

 private:
  SplitMix64 words_;
  std::uint64_t word_ = 0;
  int bits_left_ = 0;
};

// Materialized direction vector in {-1,+1}^d. Total function.
std::vector<double> rademacher_direction(std::uint32_t wire_seed, std::size_t j,
                                         std::size_t d);

// scalars[j] = u_j . grad for j = 0..m-1.
MpddPayload encode_mpdd(std::span<const double> grad, const ProjectionSpec& spec);

// (1/m) * sum_j scalars[j] * u_j, accumulated in ascending j order so the
// floating-point result is reproducible.
std::vector<double> decode_mpdd(const MpddPayload& payload,
                                const ProjectionSpec& spec);

// Direction count from the Johnson-Lindenstrauss recipe:
//   m = max(1, ceil(c * ln(d/delta) / eps^2)).
// May exceed d; the codec accepts that (the estimator just gets tighter).
std::size_t jl_directions(std::size_t d, double eps, double delta, double c);

}  // namespace fedmpdd
