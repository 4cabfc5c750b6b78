#include "fedmpdd/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedmpdd/projection.hpp"
#include "fedmpdd/rng.hpp"

namespace fedmpdd {
namespace {

double norm_sq(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

std::vector<double> default_probe_vector(std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(derive_key(seed, 0xD1CEull));
  std::vector<double> g(d);
  for (double& x : g) x = rng.next_gaussian();
  return g;
}

std::uint32_t fresh_wire_seed(SplitMix64& rng) {
  return static_cast<std::uint32_t>(rng.next() >> 32);
}

struct RunningMean {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  double std_error() const {
    const double m = mean();
    const double var = (sum_sq - static_cast<double>(n) * m * m) /
                       static_cast<double>(n - 1);
    return std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
};

}  // namespace

VerifierReport verify_relative_recon_error(std::size_t d, std::size_t m,
                                           std::optional<std::vector<double>> g,
                                           std::size_t trials, std::uint64_t seed) {
  if (trials < 1000) throw std::invalid_argument("verify_relative_recon_error: need >= 1000 trials");
  std::vector<double> grad = g ? std::move(*g) : default_probe_vector(d, seed);
  if (grad.size() != d) throw std::invalid_argument("verify_relative_recon_error: g has wrong length");
  const double g_norm_sq = norm_sq(grad);
  if (g_norm_sq == 0.0) throw std::invalid_argument("verify_relative_recon_error: zero gradient");

  SplitMix64 seeder(derive_key(seed, 0x9ec0ull));
  RunningMean acc;
  for (std::size_t t = 0; t < trials; ++t) {
    const ProjectionSpec spec{fresh_wire_seed(seeder), m, d};
    const std::vector<double> estimate = decode_mpdd(encode_mpdd(grad, spec), spec);
    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double delta = estimate[i] - grad[i];
      err += delta * delta;
    }
    acc.add(err / g_norm_sq);
  }
  return VerifierReport{static_cast<double>(d - 1) / static_cast<double>(m),
                        acc.mean(), acc.std_error(), trials};
}

VarianceGapReport verify_variance_gap(const std::vector<double>& g,
                                      std::size_t trials, std::uint64_t seed) {
  if (trials < 10000) throw std::invalid_argument("verify_variance_gap: need >= 10000 trials");
  const std::size_t d = g.size();
  const double g_norm_sq = norm_sq(g);

  SplitMix64 gauss_rng(derive_key(seed, 0x6a55ull));
  SplitMix64 rad_seeder(derive_key(seed, 0x4adull));

  // Per-trial scalar ||ghat||^2 for both distributions; their mean difference
  // is the total-variance gap because both estimators share the mean g.
  RunningMean diff;
  std::vector<double> sum_n(d, 0.0), sumsq_n(d, 0.0);
  std::vector<double> sum_r(d, 0.0), sumsq_r(d, 0.0);
  std::vector<double> u(d);
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& x : u) x = gauss_rng.next_gaussian();
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += u[i] * g[i];
    double y_gauss = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = s * u[i];
      y_gauss += v * v;
      sum_n[i] += v;
      sumsq_n[i] += v * v;
    }

    RademacherStream stream(fresh_wire_seed(rad_seeder), 0);
    s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      u[i] = stream.next();
      s += u[i] * g[i];
    }
    double y_rad = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = s * u[i];
      y_rad += v * v;
      sum_r[i] += v;
      sumsq_r[i] += v * v;
    }
    diff.add(y_gauss - y_rad);
  }

  VarianceGapReport report;
  report.analytic_total = 2.0 * g_norm_sq;
  report.estimate_total = diff.mean();
  report.std_error_total = diff.std_error();
  report.trials = trials;
  report.per_coordinate.resize(d);
  const double n = static_cast<double>(trials);
  for (std::size_t i = 0; i < d; ++i) {
    const double var_n = sumsq_n[i] / n - (sum_n[i] / n) * (sum_n[i] / n);
    const double var_r = sumsq_r[i] / n - (sum_r[i] / n) * (sum_r[i] / n);
    report.per_coordinate[i] = var_n - var_r;
  }
  return report;
}

RankReport verify_multi_round_rank(const std::vector<std::uint32_t>& wire_seeds,
                                   std::size_t m, std::size_t d) {
  if (wire_seeds.empty()) throw std::invalid_argument("verify_multi_round_rank: need T >= 1");
  const std::size_t rows = wire_seeds.size() * m;
  std::vector<std::vector<double>> a;
  a.reserve(rows);
  for (std::uint32_t seed : wire_seeds) {
    for (std::size_t j = 0; j < m; ++j) a.push_back(rademacher_direction(seed, j, d));
  }

  // Gaussian elimination with partial pivoting over the row list.
  std::size_t rank = 0;
  double largest_pivot = 0.0;
  for (std::size_t col = 0; col < d && rank < rows; ++col) {
    std::size_t best = rank;
    for (std::size_t r = rank + 1; r < rows; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[best][col])) best = r;
    }
    const double pivot = a[best][col];
    largest_pivot = std::max(largest_pivot, std::fabs(pivot));
    if (std::fabs(pivot) <= 1e-9 * std::max(largest_pivot, 1.0)) continue;
    std::swap(a[rank], a[best]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const double factor = a[r][col] / pivot;
      if (factor == 0.0) continue;
      for (std::size_t cc = col; cc < d; ++cc) a[r][cc] -= factor * a[rank][cc];
    }
    ++rank;
  }
  return RankReport{rank, rank < d};
}

VerifierReport verify_ldp_relative_error(const std::vector<double>& g, double tau,
                                         std::size_t trials, std::uint64_t seed) {
  const double g_norm_sq = norm_sq(g);
  if (g_norm_sq == 0.0) throw std::invalid_argument("verify_ldp_relative_error: zero gradient");
  if (tau < 0.0) throw std::invalid_argument("verify_ldp_relative_error: negative tau");
  const std::size_t d = g.size();

  SplitMix64 rng(derive_key(seed, 0x1d9ull));
  RunningMean acc;
  for (std::size_t t = 0; t < trials; ++t) {
    double zeta_sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double z = tau * rng.next_gaussian();
      zeta_sq += z * z;
    }
    acc.add(zeta_sq / g_norm_sq);
  }
  return VerifierReport{static_cast<double>(d) * tau * tau / g_norm_sq, acc.mean(),
                        acc.std_error(), trials};
}

double descent_flip_frequency(const std::vector<double>& g, double tau,
                              std::size_t trials, std::uint64_t seed) {
  const std::size_t d = g.size();
  SplitMix64 rng(derive_key(seed, 0xf11bull));
  std::size_t flips = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += (g[i] + tau * rng.next_gaussian()) * g[i];
    }
    if (dot < 0.0) ++flips;
  }
  return static_cast<double>(flips) / static_cast<double>(trials);
}

JlReport verify_jl_norm_bound(std::size_t d, double eps, double delta, double c,
                              std::size_t trials, std::uint64_t seed) {
  const std::size_t m = jl_directions(d, eps, delta, c);
  std::vector<double> g = default_probe_vector(d, seed);
  const double g_norm = std::sqrt(norm_sq(g));
  const double bound = (1.0 + eps) * g_norm;

  SplitMix64 seeder(derive_key(seed, 0x71ull));
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const ProjectionSpec spec{fresh_wire_seed(seeder), m, d};
    const std::vector<double> estimate = decode_mpdd(encode_mpdd(g, spec), spec);
    if (std::sqrt(norm_sq(estimate)) <= bound) ++ok;
  }
  return JlReport{m, static_cast<double>(ok) / static_cast<double>(trials), trials};
}

namespace {

// Matching loss D = ||g'(dummy) - observed||^2 for the current dummy
// variables. Unknown-label attacks optimize label logits jointly; the dummy
// gradient then uses softmax(logits) as a soft target.
struct MatchingObjective {
  const ModelKind& model;
  const ModelState& state;
  std::span<const double> observed;
  int true_label;
  bool label_known;
  std::size_t p;

  double operator()(std::span<const double> vars) const {
    RowMatrix inputs(1, p);
    std::copy(vars.begin(), vars.begin() + p, inputs.row(0));
    RowMatrix targets(1, model.classes);
    if (label_known) {
      targets.row(0)[true_label] = 1.0;
    } else {
      double zmax = vars[p];
      for (std::size_t c = 1; c < static_cast<std::size_t>(model.classes); ++c) {
        zmax = std::max(zmax, vars[p + c]);
      }
      double sum = 0.0;
      for (std::size_t c = 0; c < static_cast<std::size_t>(model.classes); ++c) {
        targets.row(0)[c] = std::exp(vars[p + c] - zmax);
        sum += targets.row(0)[c];
      }
      for (std::size_t c = 0; c < static_cast<std::size_t>(model.classes); ++c) {
        targets.row(0)[c] /= sum;
      }
    }
    const LossGrad lg = loss_and_grad_soft(model, state, inputs, targets);
    double dist = 0.0;
    for (std::size_t t = 0; t < observed.size(); ++t) {
      const double delta = lg.grad[t] - observed[t];
      dist += delta * delta;
    }
    return dist;
  }
};

}  // namespace

AttackResult dlg_attack(const ModelKind& model, const ModelState& state,
                        std::span<const double> observed, const Batch& true_batch,
                        const AttackConfig& cfg) {
  if (true_batch.inputs.rows != 1) {
    throw std::invalid_argument("dlg_attack: expects a single-sample batch");
  }
  if (observed.size() != state.dim()) {
    throw std::invalid_argument("dlg_attack: observed gradient has wrong length");
  }
  if (cfg.iterations < 1 || !(cfg.lr > 0.0) || !(cfg.finite_diff_h > 0.0)) {
    throw std::invalid_argument("dlg_attack: bad attack configuration");
  }

  const std::size_t p = true_batch.inputs.cols;
  const std::size_t n_vars = cfg.label_known ? p : p + model.classes;
  std::vector<double> vars(n_vars);
  SplitMix64 rng(derive_key(cfg.init_seed, purpose::kAttack));
  for (double& v : vars) v = rng.next_gaussian();
  if (cfg.init_input) {
    if (cfg.init_input->size() != p) throw std::invalid_argument("dlg_attack: init_input length");
    std::copy(cfg.init_input->begin(), cfg.init_input->end(), vars.begin());
  }

  const MatchingObjective objective{model, state, observed, true_batch.labels[0],
                                    cfg.label_known, p};
  const double* truth = true_batch.inputs.row(0);
  const auto input_mse = [&](std::span<const double> v) {
    double err = 0.0;
    for (std::size_t t = 0; t < p; ++t) {
      const double delta = v[t] - truth[t];
      err += delta * delta;
    }
    return err / static_cast<double>(p);
  };

  AttackResult result;
  std::vector<double> best_vars = vars;
  double best_loss = objective(vars);
  if (!std::isfinite(best_loss)) throw std::runtime_error("dlg_attack: matching loss is not finite at init");
  result.loss_history.push_back(best_loss);
  result.mse_history.push_back(input_mse(vars));

  std::vector<double> m1(n_vars, 0.0), m2(n_vars, 0.0), grad(n_vars);
  std::vector<double> probe = vars;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    // central finite differences of D over every dummy variable
    for (std::size_t t = 0; t < n_vars; ++t) {
      const double saved = probe[t];
      probe[t] = saved + cfg.finite_diff_h;
      const double up = objective(probe);
      probe[t] = saved - cfg.finite_diff_h;
      const double down = objective(probe);
      probe[t] = saved;
      grad[t] = (up - down) / (2.0 * cfg.finite_diff_h);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(it));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(it));
    for (std::size_t t = 0; t < n_vars; ++t) {
      m1[t] = cfg.beta1 * m1[t] + (1.0 - cfg.beta1) * grad[t];
      m2[t] = cfg.beta2 * m2[t] + (1.0 - cfg.beta2) * grad[t] * grad[t];
      vars[t] -= cfg.lr * (m1[t] / bc1) / (std::sqrt(m2[t] / bc2) + cfg.adam_eps);
    }
    probe = vars;

    const double loss = objective(vars);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("dlg_attack: matching loss diverged at iteration " +
                               std::to_string(it));
    }
    result.loss_history.push_back(loss);
    result.mse_history.push_back(input_mse(vars));
    if (loss < best_loss) {
      best_loss = loss;
      best_vars = vars;
    }
  }

  result.reconstructed.assign(best_vars.begin(), best_vars.begin() + p);
  result.best_matching_loss = best_loss;
  result.input_mse = input_mse(result.reconstructed);
  return result;
}

double ssim(const RowMatrix& img_a, const RowMatrix& img_b) {
  if (img_a.rows != img_b.rows || img_a.cols != img_b.cols) {
    throw std::invalid_argument("ssim: shape mismatch");
  }
  const std::size_t n = img_a.rows * img_a.cols;
  if (n == 0) throw std::invalid_argument("ssim: empty image");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(img_a.data[i]) || !std::isfinite(img_b.data[i])) {
      throw std::invalid_argument("ssim: non-finite pixel");
    }
  }

  double mu_a = 0.0, mu_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu_a += img_a.data[i];
    mu_b += img_b.data[i];
  }
  mu_a /= static_cast<double>(n);
  mu_b /= static_cast<double>(n);

  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = img_a.data[i] - mu_a;
    const double db = img_b.data[i] - mu_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  var_a /= denom;
  var_b /= denom;
  cov /= denom;

  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

double estimate_input_lipschitz(const ModelKind& model, const ModelState& state,
                                const Batch& probe, std::size_t samples,
                                std::uint64_t seed) {
  if (samples < 10) throw std::invalid_argument("estimate_input_lipschitz: need >= 10 samples");
  if (probe.inputs.rows == 0) throw std::invalid_argument("estimate_input_lipschitz: empty probe batch");
  const std::size_t p = probe.inputs.cols;

  SplitMix64 rng(derive_key(seed, 0x11b5ull));
  const auto single_grad = [&](const std::vector<double>& v, int label) {
    Batch b;
    b.inputs = RowMatrix(1, p);
    std::copy(v.begin(), v.end(), b.inputs.row(0));
    b.labels = {label};
    return loss_and_grad(model, state, b).grad;
  };

  double best = 0.0;
  std::vector<double> v1(p), v2(p);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t row = s % probe.inputs.rows;
    const double* base = probe.inputs.row(row);
    for (std::size_t t = 0; t < p; ++t) {
      v1[t] = base[t] + 0.5 * rng.next_gaussian();
      v2[t] = base[t] + 0.5 * rng.next_gaussian();
    }
    double dist_sq = 0.0;
    for (std::size_t t = 0; t < p; ++t) {
      const double delta = v1[t] - v2[t];
      dist_sq += delta * delta;
    }
    if (dist_sq == 0.0) continue;  // degenerate pair
    const std::vector<double> g1 = single_grad(v1, probe.labels[row]);
    const std::vector<double> g2 = single_grad(v2, probe.labels[row]);
    double grad_dist_sq = 0.0;
    for (std::size_t t = 0; t < g1.size(); ++t) {
      const double delta = g1[t] - g2[t];
      grad_dist_sq += delta * delta;
    }
    best = std::max(best, std::sqrt(grad_dist_sq / dist_sq));
  }
  return best;
}

}  // namespace fedmpdd
