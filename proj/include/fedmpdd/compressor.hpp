#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "fedmpdd/projection.hpp"
#include "fedmpdd/rng.hpp"

namespace fedmpdd {

enum class CompressorKind { kFull, kMpdd, kQsgd, kTopk, kLdpFull };
enum class LdpNoise { kGaussian, kLaplace };

struct CompressorConfig {
  CompressorKind kind = CompressorKind::kFull;
  std::size_t mpdd_directions = 1;        // mpdd: m
  int qsgd_bits = 8;                      // qsgd: b in [1,16]
  std::size_t topk_k = 1;                 // topk: k
  LdpNoise ldp_noise = LdpNoise::kGaussian;
  double ldp_scale = 0.0;                 // gaussian tau / laplace b

  static CompressorConfig full() { return {CompressorKind::kFull}; }
  static CompressorConfig mpdd(std::size_t m) {
    CompressorConfig c{CompressorKind::kMpdd};
    c.mpdd_directions = m;
    return c;
  }
  static CompressorConfig qsgd(int bits) {
    CompressorConfig c{CompressorKind::kQsgd};
    c.qsgd_bits = bits;
    return c;
  }
  static CompressorConfig topk(std::size_t k) {
    CompressorConfig c{CompressorKind::kTopk};
    c.topk_k = k;
    return c;
  }
  static CompressorConfig ldp(LdpNoise noise, double scale) {
    CompressorConfig c{CompressorKind::kLdpFull};
    c.ldp_noise = noise;
    c.ldp_scale = scale;
    return c;
  }
};

struct QsgdPayload {
  double norm = 0.0;
  std::vector<std::uint8_t> signs;    // 1 = negative
  std::vector<std::uint32_t> levels;  // in [0, 2^b - 1]
  int bits = 1;
};

struct TopkPayload {
  std::vector<std::uint32_t> indices;  // ascending
  std::vector<double> values;
};

// Compressed client payload plus its exact on-the-wire size. The accounting
// treats every float and every index as 4 bytes (the 32-bit convention);
// in-memory math stays 64-bit.
struct UplinkMessage {
  CompressorKind kind = CompressorKind::kFull;
  std::uint64_t byte_size = 0;
  std::variant<std::vector<double>, MpddPayload, QsgdPayload, TopkPayload> payload;
};

// Which round/client a message belongs to; all compressor randomness is
// re-derivable from it.
struct RoundContext {
  std::uint64_t master_seed = 0;
  std::uint64_t round = 0;
  std::uint64_t client = 0;
};

// Wire bytes per client message as a pure function of (kind, d, parameters):
//   full     4d          mpdd  4(m+1)      qsgd  4 + ceil(d(b+1)/8)
//   topk     8k          ldp_full  4d
std::uint64_t uplink_bytes(const CompressorConfig& cfg, std::size_t d);

UplinkMessage compress(const CompressorConfig& cfg, std::span<const double> grad,
                       const RoundContext& ctx);

std::vector<double> decompress(const CompressorConfig& cfg, const UplinkMessage& msg,
                               std::size_t d);

// Stochastic uniform quantizer with s = 2^b - 1 levels:
//   level_i = floor(|g_i|/||g|| * s) + Bernoulli(fractional part)
// Unbiased: dequantize reproduces g in expectation. ||g|| = 0 -> all zero.
QsgdPayload qsgd_quantize(std::span<const double> grad, int bits, SplitMix64& rng);
std::vector<double> qsgd_dequantize(const QsgdPayload& payload);

// grad + iid per-coordinate noise (gaussian variance scale^2, laplace
// variance 2*scale^2), deterministic for a given rng_key.
std::vector<double> ldp_perturb(std::span<const double> grad, LdpNoise noise,
                                double scale, std::uint64_t rng_key);

// Canonical little-endian serialization (1 tag byte, then the payload with
// every value at 32 bits). Exists so the byte accounting can be audited:
// serialize(msg).size() == 1 + msg.byte_size.
std::vector<std::uint8_t> serialize(const UplinkMessage& msg);

}  // namespace fedmpdd
