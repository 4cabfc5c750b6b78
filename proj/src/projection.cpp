#include "fedmpdd/projection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace fedmpdd {
namespace {

// Word-at-a-time kernels for the codec hot path. Bit b of each word flips
// the IEEE sign of the operand (bit 0 means entry -1), which keeps the loop
// branch-free; term order matches the one-entry-at-a-time stream exactly, so
// results are bit-identical to RademacherStream.
double direction_dot(std::uint32_t wire_seed, std::size_t j,
                     std::span<const double> v) {
  SplitMix64 words(direction_stream_state(wire_seed, j));
  double acc = 0.0;
  const std::size_t d = v.size();
  for (std::size_t t = 0; t < d;) {
    std::uint64_t w = words.next();
    const std::size_t block = std::min<std::size_t>(64, d - t);
    for (std::size_t b = 0; b < block; ++b, w >>= 1) {
      const std::uint64_t flip = ((w & 1) ^ 1ull) << 63;
      acc += std::bit_cast<double>(std::bit_cast<std::uint64_t>(v[t + b]) ^ flip);
    }
    t += block;
  }
  return acc;
}

void direction_axpy(std::uint32_t wire_seed, std::size_t j, double scale,
                    std::span<double> acc) {
  SplitMix64 words(direction_stream_state(wire_seed, j));
  const std::uint64_t scale_bits = std::bit_cast<std::uint64_t>(scale);
  const std::size_t d = acc.size();
  for (std::size_t t = 0; t < d;) {
    std::uint64_t w = words.next();
    const std::size_t block = std::min<std::size_t>(64, d - t);
    for (std::size_t b = 0; b < block; ++b, w >>= 1) {
      const std::uint64_t flip = ((w & 1) ^ 1ull) << 63;
      acc[t + b] += std::bit_cast<double>(scale_bits ^ flip);
    }
    t += block;
  }
}

}  // namespace

std::vector<double> rademacher_direction(std::uint32_t wire_seed, std::size_t j,
                                         std::size_t d) {
  RademacherStream stream(wire_seed, j);
  std::vector<double> u(d);
  for (std::size_t t = 0; t < d; ++t) u[t] = stream.next();
  return u;
}

MpddPayload encode_mpdd(std::span<const double> grad, const ProjectionSpec& spec) {
  if (grad.size() != spec.dim) {
    throw std::invalid_argument("encode_mpdd: gradient length does not match spec.dim");
  }
  MpddPayload payload;
  payload.wire_seed = spec.wire_seed;
  payload.scalars.resize(spec.directions);
  for (std::size_t j = 0; j < spec.directions; ++j) {
    payload.scalars[j] = direction_dot(spec.wire_seed, j, grad);
  }
  return payload;
}

std::vector<double> decode_mpdd(const MpddPayload& payload,
                                const ProjectionSpec& spec) {
  if (payload.scalars.size() != spec.directions) {
    throw std::invalid_argument("decode_mpdd: scalar count does not match spec.directions");
  }
  std::vector<double> estimate(spec.dim, 0.0);
  const double inv_m = 1.0 / static_cast<double>(spec.directions);
  for (std::size_t j = 0; j < spec.directions; ++j) {
    direction_axpy(payload.wire_seed, j, payload.scalars[j] * inv_m, estimate);
  }
  return estimate;
}

std::size_t jl_directions(std::size_t d, double eps, double delta, double c) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("jl_directions: eps must be in (0,1)");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("jl_directions: delta must be in (0,1)");
  if (!(c > 0.0)) throw std::invalid_argument("jl_directions: c must be positive");
  if (d == 0) throw std::invalid_argument("jl_directions: d must be positive");
  const double m = std::ceil(c * std::log(static_cast<double>(d) / delta) / (eps * eps));
  if (m < 1.0) return 1;
  return static_cast<std::size_t>(m);
}

}  // namespace fedmpdd
