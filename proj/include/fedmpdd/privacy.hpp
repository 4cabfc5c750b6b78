#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedmpdd/model.hpp"

namespace fedmpdd {

// Monte Carlo estimate against a closed-form target.
struct VerifierReport {
  double analytic = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;

  bool within_sigma(double n_sigma) const {
    return std_error == 0.0 ? estimate == analytic
                            : std::abs(estimate - analytic) <= n_sigma * std_error;
  }
};

// E ||ghat - g||^2 / ||g||^2 over fresh direction seeds; target (d-1)/m.
// When g is not supplied a fixed pseudo-random nonzero vector is used.
VerifierReport verify_relative_recon_error(std::size_t d, std::size_t m,
                                           std::optional<std::vector<double>> g,
                                           std::size_t trials, std::uint64_t seed);

// Total-variance gap between Gaussian-direction and Rademacher-direction
// single-projection estimators. The scalar gap
//   trace Var_gauss - trace Var_rad = E||ghat_N||^2 - E||ghat_R||^2
// equals 2||g||^2 for every g and d. Per-coordinate diagonal gaps are also
// reported; coordinate t converges to 2*g_t^2.
struct VarianceGapReport {
  double analytic_total = 0.0;
  double estimate_total = 0.0;
  double std_error_total = 0.0;
  std::vector<double> per_coordinate;
  std::size_t trials = 0;
};
VarianceGapReport verify_variance_gap(const std::vector<double>& g,
                                      std::size_t trials, std::uint64_t seed);

// Numerical rank of the (T*m) x d matrix stacking every direction an
// adversary observes over T rounds. Gaussian elimination with partial
// pivoting; a pivot below 1e-9 times the largest pivot counts as zero.
struct RankReport {
  std::size_t rank = 0;
  bool underdetermined = false;  // rank < d
};
RankReport verify_multi_round_rank(const std::vector<std::uint32_t>& wire_seeds,
                                   std::size_t m, std::size_t d);

// E ||zeta||^2 / ||g||^2 for gaussian noise of per-coordinate std tau;
// target d*tau^2/||g||^2.
VerifierReport verify_ldp_relative_error(const std::vector<double>& g, double tau,
                                         std::size_t trials, std::uint64_t seed);

// Fraction of trials where the noised gradient points uphill:
// (g + zeta) . g < 0 with gaussian zeta of per-coordinate std tau.
double descent_flip_frequency(const std::vector<double>& g, double tau,
                              std::size_t trials, std::uint64_t seed);

// Empirical check of the norm-distortion guarantee: with m directions from
// the JL recipe, the fraction of trials where ||decode(encode(g))|| stays
// within (1+eps)*||g||.
struct JlReport {
  std::size_t m = 0;
  double pass_rate = 0.0;
  std::size_t trials = 0;
};
JlReport verify_jl_norm_bound(std::size_t d, double eps, double delta, double c,
                              std::size_t trials, std::uint64_t seed);

// Gradient-matching inversion attack (the classic single-sample setting):
// optimizes a dummy input, and dummy label logits when the label is unknown,
// so that its gradient matches the observed estimate.
struct AttackConfig {
  std::size_t iterations = 500;
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool label_known = true;
  std::uint64_t init_seed = 1;
  double finite_diff_h = 1e-4;
  std::optional<std::vector<double>> init_input;  // overrides the normal init
};

struct AttackResult {
  std::vector<double> reconstructed;
  std::vector<double> loss_history;  // matching loss per iterate
  std::vector<double> mse_history;   // input MSE per iterate
  double input_mse = 0.0;            // ||v - vhat||^2 / p at the best iterate
  double best_matching_loss = 0.0;
};

AttackResult dlg_attack(const ModelKind& model, const ModelState& state,
                        std::span<const double> observed, const Batch& true_batch,
                        const AttackConfig& cfg);

// Single-window structural similarity with C1=(0.01)^2, C2=(0.03)^2 for unit
// dynamic range; sample (n-1) variance and covariance.
double ssim(const RowMatrix& img_a, const RowMatrix& img_b);

// Sampled lower estimate of the Lipschitz constant of the parameter gradient
// as a function of the input: max over pairs of ||g(v1)-g(v2)||/||v1-v2||.
double estimate_input_lipschitz(const ModelKind& model, const ModelState& state,
                                const Batch& probe, std::size_t samples,
                                std::uint64_t seed);

}  // namespace fedmpdd
