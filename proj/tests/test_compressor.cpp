#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "fedmpdd/compressor.hpp"
#include "fedmpdd/rng.hpp"

using namespace fedmpdd;

namespace {

std::vector<double> random_grad(std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> g(d);
  for (double& v : g) v = rng.next_gaussian();
  return g;
}

const RoundContext kCtx{99, 3, 7};

}  // namespace

TEST_CASE("byte accounting table") {
  CHECK(uplink_bytes(CompressorConfig::full(), 13426) == 53704);
  CHECK(uplink_bytes(CompressorConfig::mpdd(600), 13426) == 2404);
  CHECK(uplink_bytes(CompressorConfig::mpdd(1), 13426) == 8);
  CHECK(uplink_bytes(CompressorConfig::qsgd(8), 100) == 4 + (100 * 9 + 7) / 8);
  CHECK(uplink_bytes(CompressorConfig::topk(10), 13426) == 80);
  CHECK(uplink_bytes(CompressorConfig::ldp(LdpNoise::kGaussian, 0.5), 13426) == 53704);
}

TEST_CASE("serialized length equals the accounted byte size plus the tag") {
  const std::vector<double> g = random_grad(57, 4);
  for (const CompressorConfig& cfg :
       {CompressorConfig::full(), CompressorConfig::mpdd(9), CompressorConfig::qsgd(8),
        CompressorConfig::qsgd(3), CompressorConfig::topk(5),
        CompressorConfig::ldp(LdpNoise::kLaplace, 0.25)}) {
    const UplinkMessage msg = compress(cfg, g, kCtx);
    CHECK(serialize(msg).size() == 1 + msg.byte_size);
  }
}

TEST_CASE("identity round trip is exact") {
  const std::vector<double> g = random_grad(31, 5);
  const UplinkMessage msg = compress(CompressorConfig::full(), g, kCtx);
  CHECK(decompress(CompressorConfig::full(), msg, 31) == g);
}

TEST_CASE("topk keeps the largest magnitudes with zeros elsewhere") {
  const std::vector<double> g{3.0, -5.0, 1.0};
  const UplinkMessage msg = compress(CompressorConfig::topk(1), g, kCtx);
  const std::vector<double> out = decompress(CompressorConfig::topk(1), msg, 3);
  CHECK(out == std::vector<double>{0.0, -5.0, 0.0});
}

TEST_CASE("topk breaks magnitude ties toward the lower index") {
  const std::vector<double> g{2.0, -2.0, 2.0, 1.0};
  const UplinkMessage msg = compress(CompressorConfig::topk(2), g, kCtx);
  const std::vector<double> out = decompress(CompressorConfig::topk(2), msg, 4);
  CHECK(out == std::vector<double>{2.0, -2.0, 0.0, 0.0});
}

TEST_CASE("topk parameter validation") {
  const std::vector<double> g{1.0, 2.0};
  CHECK_THROWS_AS(compress(CompressorConfig::topk(0), g, kCtx), std::invalid_argument);
  CHECK_THROWS_AS(compress(CompressorConfig::topk(3), g, kCtx), std::invalid_argument);
}

TEST_CASE("mpdd message round trip matches the codec composition") {
  const std::vector<double> g = random_grad(40, 6);
  const CompressorConfig cfg = CompressorConfig::mpdd(7);
  const UplinkMessage msg = compress(cfg, g, kCtx);
  const auto& payload = std::get<MpddPayload>(msg.payload);
  CHECK(payload.wire_seed == wire_seed_for(kCtx.master_seed, kCtx.round, kCtx.client));

  const ProjectionSpec spec{payload.wire_seed, 7, 40};
  CHECK(decompress(cfg, msg, 40) == decode_mpdd(encode_mpdd(g, spec), spec));
}

TEST_CASE("qsgd integer ratios quantize deterministically") {
  // norm 1, ratios 0.6*255 and 0.8*255 are exact integers
  const std::vector<double> g{0.6, 0.8};
  SplitMix64 rng(1);
  const QsgdPayload payload = qsgd_quantize(g, 8, rng);
  CHECK(payload.norm == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(payload.levels[0] == 153);
  CHECK(payload.levels[1] == 204);
  const std::vector<double> out = qsgd_dequantize(payload);
  CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("qsgd zero vector stays zero") {
  SplitMix64 rng(1);
  const QsgdPayload payload = qsgd_quantize(std::vector<double>{0.0, 0.0, 0.0}, 4, rng);
  CHECK(payload.norm == 0.0);
  for (auto level : payload.levels) CHECK(level == 0);
  for (double v : qsgd_dequantize(payload)) CHECK(v == 0.0);
}

TEST_CASE("qsgd bit range is enforced") {
  SplitMix64 rng(1);
  const std::vector<double> g{1.0};
  CHECK_THROWS_AS(qsgd_quantize(g, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(qsgd_quantize(g, 17, rng), std::invalid_argument);
}

TEST_CASE("qsgd dequantization is unbiased") {
  const std::vector<double> g{1.0, 2.0, -3.0};
  const std::size_t trials = 100000;
  std::vector<double> sum(3, 0.0), sumsq(3, 0.0);
  SplitMix64 rng(77);
  for (std::size_t t = 0; t < trials; ++t) {
    const QsgdPayload payload = qsgd_quantize(g, 2, rng);
    const std::vector<double> est = qsgd_dequantize(payload);
    for (std::size_t i = 0; i < 3; ++i) {
      sum[i] += est[i];
      sumsq[i] += est[i] * est[i];
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double mean = sum[i] / trials;
    const double var = sumsq[i] / trials - mean * mean;
    const double se = std::sqrt(var / trials);
    CHECK(std::fabs(mean - g[i]) <= 4.0 * se);
  }
}

TEST_CASE("ldp with zero scale is the identity") {
  const std::vector<double> g = random_grad(10, 8);
  CHECK(ldp_perturb(g, LdpNoise::kGaussian, 0.0, 5) == g);
  CHECK(ldp_perturb(g, LdpNoise::kLaplace, 0.0, 5) == g);
  CHECK_THROWS_AS(ldp_perturb(g, LdpNoise::kGaussian, -1.0, 5), std::invalid_argument);
}

TEST_CASE("ldp noise variance matches the configured scale") {
  const std::vector<double> g(1, 0.0);
  const std::size_t trials = 100000;
  for (const LdpNoise noise : {LdpNoise::kGaussian, LdpNoise::kLaplace}) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double v = ldp_perturb(g, noise, 0.5, derive_key(9, t))[0];
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / trials;
    const double var = sumsq / trials - mean * mean;
    const double expected = noise == LdpNoise::kGaussian ? 0.25 : 2.0 * 0.25;
    CHECK(var == doctest::Approx(expected).epsilon(0.03));
  }
}

TEST_CASE("ldp is deterministic per key") {
  const std::vector<double> g = random_grad(6, 10);
  CHECK(ldp_perturb(g, LdpNoise::kGaussian, 1.0, 42) ==
        ldp_perturb(g, LdpNoise::kGaussian, 1.0, 42));
  CHECK(ldp_perturb(g, LdpNoise::kGaussian, 1.0, 42) !=
        ldp_perturb(g, LdpNoise::kGaussian, 1.0, 43));
}

TEST_CASE("kind mismatch is rejected") {
  const std::vector<double> g = random_grad(5, 11);
  const UplinkMessage msg = compress(CompressorConfig::full(), g, kCtx);
  CHECK_THROWS_AS(decompress(CompressorConfig::topk(1), msg, 5), std::invalid_argument);
}

TEST_CASE("non-finite gradients are rejected") {
  std::vector<double> g{1.0, std::nan("")};
  CHECK_THROWS_AS(compress(CompressorConfig::full(), g, kCtx), std::invalid_argument);
}

TEST_CASE("every compressor decompresses finite to finite at length d") {
  const std::vector<double> g = random_grad(23, 12);
  for (const CompressorConfig& cfg :
       {CompressorConfig::full(), CompressorConfig::mpdd(4), CompressorConfig::qsgd(6),
        CompressorConfig::topk(9), CompressorConfig::ldp(LdpNoise::kGaussian, 0.7)}) {
    const UplinkMessage msg = compress(cfg, g, kCtx);
    const std::vector<double> out = decompress(cfg, msg, 23);
    REQUIRE(out.size() == 23);
    for (double v : out) CHECK(std::isfinite(v));
  }
}
