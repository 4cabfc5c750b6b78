#include "fedmpdd/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace fedmpdd {
namespace {

void require_finite(std::span<const double> grad) {
  for (double g : grad) {
    if (!std::isfinite(g)) throw std::invalid_argument("compress: gradient is not finite");
  }
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
  out.push_back((v >> 16) & 0xFF);
  out.push_back((v >> 24) & 0xFF);
}

void append_f32(std::vector<std::uint8_t>& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  append_u32(out, bits);
}

}  // namespace

std::uint64_t uplink_bytes(const CompressorConfig& cfg, std::size_t d) {
  switch (cfg.kind) {
    case CompressorKind::kFull:
    case CompressorKind::kLdpFull:
      return 4ull * d;
    case CompressorKind::kMpdd:
      return 4ull * (cfg.mpdd_directions + 1);
    case CompressorKind::kQsgd: {
      const std::uint64_t bits = static_cast<std::uint64_t>(d) * (cfg.qsgd_bits + 1);
      return 4ull + (bits + 7) / 8;
    }
    case CompressorKind::kTopk:
      return 8ull * cfg.topk_k;
  }
  throw std::invalid_argument("uplink_bytes: unknown compressor kind");
}

QsgdPayload qsgd_quantize(std::span<const double> grad, int bits, SplitMix64& rng) {
  if (bits < 1 || bits > 16) throw std::invalid_argument("qsgd: bits must be in [1,16]");
  const double s = static_cast<double>((1u << bits) - 1);
  QsgdPayload out;
  out.bits = bits;
  out.signs.resize(grad.size());
  out.levels.resize(grad.size());
  double norm_sq = 0.0;
  for (double g : grad) norm_sq += g * g;
  out.norm = std::sqrt(norm_sq);
  if (out.norm == 0.0) return out;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    out.signs[i] = grad[i] < 0.0 ? 1 : 0;
    const double ratio = std::fabs(grad[i]) / out.norm * s;
    double level = std::floor(ratio);
    const double frac = ratio - level;
    if (rng.next_unit() < frac) level += 1.0;
    out.levels[i] = static_cast<std::uint32_t>(level);
  }
  return out;
}

std::vector<double> qsgd_dequantize(const QsgdPayload& payload) {
  const double s = static_cast<double>((1u << payload.bits) - 1);
  std::vector<double> out(payload.levels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sign = payload.signs[i] ? -1.0 : 1.0;
    out[i] = payload.norm * sign * static_cast<double>(payload.levels[i]) / s;
  }
  return out;
}

std::vector<double> ldp_perturb(std::span<const double> grad, LdpNoise noise,
                                double scale, std::uint64_t rng_key) {
  if (scale < 0.0) throw std::invalid_argument("ldp_perturb: negative scale");
  std::vector<double> out(grad.begin(), grad.end());
  if (scale == 0.0) return out;
  SplitMix64 rng(rng_key);
  for (double& v : out) {
    v += noise == LdpNoise::kGaussian ? scale * rng.next_gaussian()
                                      : rng.next_laplace(scale);
  }
  return out;
}

UplinkMessage compress(const CompressorConfig& cfg, std::span<const double> grad,
                       const RoundContext& ctx) {
  if (grad.empty()) throw std::invalid_argument("compress: empty gradient");
  require_finite(grad);
  const std::size_t d = grad.size();
  UplinkMessage msg;
  msg.kind = cfg.kind;
  msg.byte_size = uplink_bytes(cfg, d);

  switch (cfg.kind) {
    case CompressorKind::kFull:
      msg.payload = std::vector<double>(grad.begin(), grad.end());
      break;
    case CompressorKind::kMpdd: {
      if (cfg.mpdd_directions < 1) throw std::invalid_argument("compress: mpdd needs m >= 1");
      ProjectionSpec spec{wire_seed_for(ctx.master_seed, ctx.round, ctx.client),
                          cfg.mpdd_directions, d};
      msg.payload = encode_mpdd(grad, spec);
      break;
    }
    case CompressorKind::kQsgd: {
      std::uint64_t key = derive_key(ctx.master_seed, purpose::kQsgd);
      key = derive_key(key, ctx.round);
      key = derive_key(key, ctx.client);
      SplitMix64 rng(key);
      msg.payload = qsgd_quantize(grad, cfg.qsgd_bits, rng);
      break;
    }
    case CompressorKind::kTopk: {
      if (cfg.topk_k < 1) throw std::invalid_argument("compress: topk needs k >= 1");
      if (cfg.topk_k > d) throw std::invalid_argument("compress: topk k exceeds dimension");
      std::vector<std::uint32_t> order(d);
      std::iota(order.begin(), order.end(), 0u);
      // k largest magnitudes; ties go to the lower index
      std::partial_sort(order.begin(), order.begin() + cfg.topk_k, order.end(),
                        [&](std::uint32_t a, std::uint32_t b) {
                          const double ma = std::fabs(grad[a]);
                          const double mb = std::fabs(grad[b]);
                          return ma != mb ? ma > mb : a < b;
                        });
      TopkPayload payload;
      payload.indices.assign(order.begin(), order.begin() + cfg.topk_k);
      std::sort(payload.indices.begin(), payload.indices.end());
      payload.values.reserve(cfg.topk_k);
      for (std::uint32_t idx : payload.indices) payload.values.push_back(grad[idx]);
      msg.payload = std::move(payload);
      break;
    }
    case CompressorKind::kLdpFull: {
      std::uint64_t key = derive_key(ctx.master_seed, purpose::kLdp);
      key = derive_key(key, ctx.round);
      key = derive_key(key, ctx.client);
      msg.payload = ldp_perturb(grad, cfg.ldp_noise, cfg.ldp_scale, key);
      break;
    }
  }
  return msg;
}

std::vector<double> decompress(const CompressorConfig& cfg, const UplinkMessage& msg,
                               std::size_t d) {
  if (msg.kind != cfg.kind) throw std::invalid_argument("decompress: message kind mismatch");
  switch (cfg.kind) {
    case CompressorKind::kFull:
    case CompressorKind::kLdpFull: {
      const auto& values = std::get<std::vector<double>>(msg.payload);
      if (values.size() != d) throw std::invalid_argument("decompress: dimension mismatch");
      return values;
    }
    case CompressorKind::kMpdd: {
      const auto& payload = std::get<MpddPayload>(msg.payload);
      ProjectionSpec spec{payload.wire_seed, cfg.mpdd_directions, d};
      return decode_mpdd(payload, spec);
    }
    case CompressorKind::kQsgd: {
      const auto& payload = std::get<QsgdPayload>(msg.payload);
      if (payload.levels.size() != d) throw std::invalid_argument("decompress: dimension mismatch");
      if (payload.bits != cfg.qsgd_bits) throw std::invalid_argument("decompress: qsgd bit width mismatch");
      return qsgd_dequantize(payload);
    }
    case CompressorKind::kTopk: {
      const auto& payload = std::get<TopkPayload>(msg.payload);
      std::vector<double> out(d, 0.0);
      for (std::size_t i = 0; i < payload.indices.size(); ++i) {
        if (payload.indices[i] >= d) throw std::invalid_argument("decompress: index out of range");
        out[payload.indices[i]] = payload.values[i];
      }
      return out;
    }
  }
  throw std::invalid_argument("decompress: unknown compressor kind");
}

std::vector<std::uint8_t> serialize(const UplinkMessage& msg) {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(msg.kind));
  switch (msg.kind) {
    case CompressorKind::kFull:
    case CompressorKind::kLdpFull: {
      for (double v : std::get<std::vector<double>>(msg.payload)) append_f32(out, v);
      break;
    }
    case CompressorKind::kMpdd: {
      const auto& payload = std::get<MpddPayload>(msg.payload);
      append_u32(out, payload.wire_seed);
      for (double v : payload.scalars) append_f32(out, v);
      break;
    }
    case CompressorKind::kQsgd: {
      const auto& payload = std::get<QsgdPayload>(msg.payload);
      append_f32(out, payload.norm);
      // bit-packed stream, LSB first: sign bit then level bits per coordinate
      std::uint64_t acc = 0;
      int used = 0;
      for (std::size_t i = 0; i < payload.levels.size(); ++i) {
        acc |= static_cast<std::uint64_t>(payload.signs[i]) << used;
        ++used;
        acc |= static_cast<std::uint64_t>(payload.levels[i]) << used;
        used += payload.bits;
        while (used >= 8) {
          out.push_back(acc & 0xFF);
          acc >>= 8;
          used -= 8;
        }
      }
      if (used > 0) out.push_back(acc & 0xFF);
      break;
    }
    case CompressorKind::kTopk: {
      const auto& payload = std::get<TopkPayload>(msg.payload);
      for (std::size_t i = 0; i < payload.indices.size(); ++i) {
        append_u32(out, payload.indices[i]);
        append_f32(out, payload.values[i]);
      }
      break;
    }
  }
  return out;
}

}  // namespace fedmpdd
