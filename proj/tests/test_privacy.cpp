#include <doctest.h>

#include <stdexcept>
#include <tuple>
#include <algorithm>

#include <cmath>

#include "fedmpdd/compressor.hpp"
#include "fedmpdd/privacy.hpp"
#include "fedmpdd/rng.hpp"

using namespace fedmpdd;

namespace {

Batch single_sample(std::size_t p, int label, std::uint64_t seed) {
  Batch batch;
  batch.inputs = RowMatrix(1, p);
  batch.labels = {label};
  SplitMix64 rng(seed);
  for (std::size_t k = 0; k < p; ++k) batch.inputs.row(0)[k] = rng.next_gaussian();
  return batch;
}

ModelState pinned_state(const ModelKind& model, std::uint64_t seed) {
  ModelState state = ModelState::zeros(model.param_count());
  SplitMix64 rng(seed);
  for (double& w : state.params) w = 0.1 * rng.next_gaussian();
  return state;
}

}  // namespace

TEST_CASE("relative reconstruction error approaches (d-1)/m") {
  for (const auto& [d, m] : std::vector<std::pair<std::size_t, std::size_t>>{
           {50, 5}, {101, 10}, {200, 50}}) {
    const VerifierReport report =
        verify_relative_recon_error(d, m, std::nullopt, 20000, 3);
    CHECK(report.analytic == doctest::Approx((d - 1.0) / m));
    CHECK(report.within_sigma(3.0));
  }
}

TEST_CASE("one-dimensional reconstruction is exact") {
  const VerifierReport report =
      verify_relative_recon_error(1, 3, std::vector<double>{2.5}, 1000, 3);
  CHECK(report.estimate == 0.0);
  CHECK(report.analytic == 0.0);
}

TEST_CASE("reconstruction verifier rejects bad inputs") {
  CHECK_THROWS_AS(verify_relative_recon_error(5, 2, std::vector<double>(5, 0.0), 1000, 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(verify_relative_recon_error(5, 2, std::nullopt, 10, 3),
                  std::invalid_argument);
}

TEST_CASE("total variance gap between gaussian and sign directions is 2|g|^2") {
  const std::vector<double> g{1.0, 2.0};
  const VarianceGapReport report = verify_variance_gap(g, 200000, 5);
  CHECK(report.analytic_total == 10.0);
  CHECK(std::fabs(report.estimate_total - 10.0) <= 4.0 * report.std_error_total);
  // the diagonal decomposes as 2*g_t^2 per coordinate
  CHECK(report.per_coordinate[0] == doctest::Approx(2.0).epsilon(0.1));
  CHECK(report.per_coordinate[1] == doctest::Approx(8.0).epsilon(0.1));
}

TEST_CASE("variance gap vanishes for a zero gradient") {
  const VarianceGapReport report =
      verify_variance_gap(std::vector<double>{0.0, 0.0}, 10000, 5);
  CHECK(report.analytic_total == 0.0);
  CHECK(report.estimate_total == 0.0);
}

TEST_CASE("stacked observation rank follows min(T*m, d)") {
  CHECK(verify_multi_round_rank({1u}, 1, 1).rank == 1);
  CHECK_FALSE(verify_multi_round_rank({1u}, 1, 1).underdetermined);

  const RankReport few = verify_multi_round_rank({11u, 22u, 33u}, 10, 50);
  CHECK(few.rank == 30);
  CHECK(few.underdetermined);

  const RankReport enough = verify_multi_round_rank({11u, 22u, 33u, 44u, 55u}, 10, 50);
  CHECK(enough.rank == 50);
  CHECK_FALSE(enough.underdetermined);
}

TEST_CASE("rank law over a twenty-case grid") {
  SplitMix64 seeder(909);
  const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> grid{
      {1, 1, 1},   {1, 1, 8},    {1, 4, 16},  {2, 4, 16},  {4, 4, 16},
      {8, 4, 16},  {1, 10, 50},  {3, 10, 50}, {5, 10, 50}, {7, 10, 50},
      {2, 25, 40}, {1, 64, 64},  {2, 3, 100}, {9, 3, 100}, {40, 3, 100},
      {6, 6, 36},  {5, 5, 30},   {2, 8, 64},  {10, 2, 19}, {3, 33, 200}};
  REQUIRE(grid.size() == 20);
  for (const auto& [T, m, d] : grid) {
    std::vector<std::uint32_t> seeds;
    for (std::size_t t = 0; t < T; ++t) {
      seeds.push_back(static_cast<std::uint32_t>(seeder.next() >> 32));
    }
    const RankReport report = verify_multi_round_rank(seeds, m, d);
    CAPTURE(T);
    CAPTURE(m);
    CAPTURE(d);
    CHECK(report.rank == std::min(T * m, d));
    CHECK(report.underdetermined == (T * m < d));
  }
}

TEST_CASE("ldp relative error matches d tau^2 over |g|^2") {
  const std::vector<double> g{1.0, 1.0, 1.0, 1.0};  // |g| = 2
  const VerifierReport report = verify_ldp_relative_error(g, 1.0, 100000, 7);
  CHECK(report.analytic == 1.0);
  CHECK(report.estimate == doctest::Approx(1.0).epsilon(0.03));

  // zero noise, zero error
  const VerifierReport none = verify_ldp_relative_error(g, 0.0, 1000, 7);
  CHECK(none.estimate == 0.0);

  // doubling |g| quarters the relative error
  const std::vector<double> g2{2.0, 2.0, 2.0, 2.0};
  const VerifierReport quarter = verify_ldp_relative_error(g2, 1.0, 100000, 7);
  CHECK(quarter.analytic == doctest::Approx(report.analytic / 4.0));
  CHECK(quarter.estimate == doctest::Approx(report.estimate / 4.0).epsilon(1e-12));

  CHECK_THROWS_AS(verify_ldp_relative_error({0.0, 0.0}, 1.0, 1000, 7),
                  std::invalid_argument);
}

TEST_CASE("large ldp noise flips the descent direction often") {
  const std::vector<double> g{1.0, 1.0, 1.0, 1.0};
  const double tau = 4.0 * 2.0 / 2.0;  // 4 |g| / sqrt(d)
  const double freq = descent_flip_frequency(g, tau, 100000, 9);
  CHECK(freq > 0.25);
  // analytic flip probability is Phi(-sqrt(d)/4) ~ 0.3085 here
  CHECK(freq == doctest::Approx(0.3085).epsilon(0.03));

  // the projected codec never flips: asserted exactly in the codec tests
  CHECK(descent_flip_frequency(g, 0.0, 1000, 9) == 0.0);
}

TEST_CASE("jl direction count keeps the decoded norm within distortion") {
  const JlReport report = verify_jl_norm_bound(512, 0.2, 0.05, 8.0, 10000, 11);
  CHECK(report.m == 1847);
  CHECK(report.pass_rate >= 0.95);
}

TEST_CASE("global ssim on identical and shifted images") {
  RowMatrix a(4, 4);
  for (std::size_t i = 0; i < 16; ++i) a.data[i] = 0.25;
  CHECK(ssim(a, a) == doctest::Approx(1.0));

  RowMatrix b = a;
  for (double& v : b.data) v += 0.5;
  // constant images: luminance (2*0.25*0.75 + 1e-4)/(0.0625+0.5625+1e-4),
  // structure saved by C2 -> exactly 0.3751/0.6251
  CHECK(ssim(a, b) == doctest::Approx(0.3751 / 0.6251).epsilon(1e-12));

  RowMatrix wrong(2, 8);
  CHECK_THROWS_AS(ssim(a, wrong), std::invalid_argument);
}

TEST_CASE("independent noise images score near zero ssim") {
  RowMatrix a(28, 28), b(28, 28);
  SplitMix64 rng(13);
  for (double& v : a.data) v = rng.next_unit();
  for (double& v : b.data) v = rng.next_unit();
  CHECK(std::fabs(ssim(a, b)) < 0.1);
}

TEST_CASE("input lipschitz estimate is stable and monotone") {
  const ModelKind model = ModelKind::logistic(2, 6);

  // zero weights make the gradient affine in the input
  const ModelState zero = ModelState::zeros(model.param_count());
  const Batch probe = single_sample(6, 1, 15);
  const double small = estimate_input_lipschitz(model, zero, probe, 20, 17);
  const double large = estimate_input_lipschitz(model, zero, probe, 100, 17);
  CHECK(small > 0.0);
  CHECK(large >= small);                    // max over a growing set
  CHECK(large <= small * 1.1);              // affine map: ratio is stable
  CHECK_THROWS_AS(estimate_input_lipschitz(model, zero, probe, 5, 17),
                  std::invalid_argument);
}

TEST_CASE("attack initialized at the truth succeeds immediately") {
  const ModelKind model = ModelKind::logistic(2, 8);
  const ModelState state = pinned_state(model, 19);
  const Batch target = single_sample(8, 1, 21);
  const LossGrad lg = loss_and_grad(model, state, target);

  AttackConfig cfg;
  cfg.iterations = 1;
  cfg.init_input = std::vector<double>(target.inputs.data);
  const AttackResult result = dlg_attack(model, state, lg.grad, target, cfg);
  CHECK(result.loss_history.front() == 0.0);
  CHECK(result.input_mse == 0.0);
}

TEST_CASE("attack on the exact gradient recovers the input") {
  const ModelKind model = ModelKind::logistic(2, 16);
  const ModelState state = pinned_state(model, 23);
  const Batch target = single_sample(16, 0, 25);
  const LossGrad lg = loss_and_grad(model, state, target);

  AttackConfig cfg;
  cfg.iterations = 300;
  cfg.lr = 0.1;
  const AttackResult result = dlg_attack(model, state, lg.grad, target, cfg);
  CHECK(result.input_mse < 1e-2);
  CHECK(result.loss_history.size() == 301);
  CHECK(result.loss_history.back() <= result.loss_history.front());
}

TEST_CASE("attack against the projected estimate stays far from the input") {
  const ModelKind model = ModelKind::logistic(2, 16);
  const ModelState state = pinned_state(model, 23);
  const Batch target = single_sample(16, 0, 25);
  const LossGrad lg = loss_and_grad(model, state, target);

  const CompressorConfig codec = CompressorConfig::mpdd(4);
  const RoundContext ctx{31, 0, 0};
  const std::vector<double> observed =
      decompress(codec, compress(codec, lg.grad, ctx), state.dim());

  AttackConfig cfg;
  cfg.iterations = 300;
  cfg.lr = 0.1;
  const AttackResult full = dlg_attack(model, state, lg.grad, target, cfg);
  const AttackResult projected = dlg_attack(model, state, observed, target, cfg);
  CHECK(projected.input_mse >= 10.0 * full.input_mse);
}

TEST_CASE("five hundred iterations recover a 64-wide input from its gradient") {
  const ModelKind model = ModelKind::logistic(2, 64);
  ModelState state = ModelState::zeros(model.param_count());
  SplitMix64 init_rng(derive_key(71, purpose::kModelInit));
  for (double& w : state.params) w = 0.1 * init_rng.next_gaussian();
  const Batch target = single_sample(64, 1, 73);
  const LossGrad lg = loss_and_grad(model, state, target);

  AttackConfig cfg;
  cfg.iterations = 500;
  cfg.lr = 0.05;
  cfg.init_seed = 77;
  const AttackResult result = dlg_attack(model, state, lg.grad, target, cfg);
  CHECK(result.input_mse < 1e-2);
}

TEST_CASE("reconstruction error respects the projection-count lower bound") {
  // attack-optimal squared error >= (d-1)/m * |g|^2 / L_v^2, with L_v lower
  // estimated by sampling, so the right-hand side is if anything too large;
  // at these pinned seeds the relation holds with a clear margin
  const ModelKind model = ModelKind::logistic(2, 64);
  ModelState state = ModelState::zeros(model.param_count());
  SplitMix64 init_rng(derive_key(71, purpose::kModelInit));
  for (double& w : state.params) w = 0.1 * init_rng.next_gaussian();
  const Batch target = single_sample(64, 1, 73);
  const LossGrad lg = loss_and_grad(model, state, target);

  const std::size_t m = 4;
  const CompressorConfig codec = CompressorConfig::mpdd(m);
  const RoundContext ctx{75, 0, 0};
  const std::vector<double> observed =
      decompress(codec, compress(codec, lg.grad, ctx), state.dim());

  AttackConfig cfg;
  cfg.iterations = 1000;
  cfg.lr = 0.1;
  cfg.init_seed = 77;
  const AttackResult result = dlg_attack(model, state, observed, target, cfg);

  const double lip = estimate_input_lipschitz(model, state, target, 200, 99);
  double g_sq = 0.0;
  for (double v : lg.grad) g_sq += v * v;
  const double bound = (state.dim() - 1.0) / static_cast<double>(m) * g_sq / (lip * lip);
  const double attack_sq = result.input_mse * 64.0;
  CAPTURE(bound);
  CAPTURE(attack_sq);
  CHECK(attack_sq >= bound);
}

TEST_CASE("unknown-label attack optimizes label logits too") {
  const ModelKind model = ModelKind::logistic(2, 6);
  const ModelState state = pinned_state(model, 27);
  const Batch target = single_sample(6, 1, 29);
  const LossGrad lg = loss_and_grad(model, state, target);

  AttackConfig cfg;
  cfg.iterations = 400;
  cfg.lr = 0.1;
  cfg.label_known = false;
  const AttackResult result = dlg_attack(model, state, lg.grad, target, cfg);
  CHECK(result.best_matching_loss < result.loss_history.front());
  CHECK(result.input_mse < 0.5);
}

TEST_CASE("attack rejects malformed inputs") {
  const ModelKind model = ModelKind::logistic(2, 6);
  const ModelState state = pinned_state(model, 27);
  const Batch target = single_sample(6, 1, 29);
  AttackConfig cfg;
  CHECK_THROWS_AS(dlg_attack(model, state, std::vector<double>(3, 0.0), target, cfg),
                  std::invalid_argument);
  Batch two;
  two.inputs = RowMatrix(2, 6);
  two.labels = {0, 1};
  CHECK_THROWS_AS(
      dlg_attack(model, state, std::vector<double>(state.dim(), 0.0), two, cfg),
      std::invalid_argument);
}
