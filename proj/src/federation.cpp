#include "fedmpdd/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedmpdd/rng.hpp"

namespace fedmpdd {
namespace {

// Mini-batch row indices for client i at round k: slot k of the client's
// seed-shuffled shard permutation, re-shuffled every epoch.
std::vector<std::size_t> batch_rows(const ClientShard& shard,
                                    const ExperimentConfig& cfg, std::size_t k) {
  const std::size_t shard_size = shard.rows.size();
  if (shard_size == 0) throw std::invalid_argument("run_round: empty client shard");
  const std::size_t batch = std::min(cfg.batch, shard_size);
  const std::size_t batches_per_epoch = (shard_size + batch - 1) / batch;
  const std::size_t epoch = k / batches_per_epoch;
  const std::size_t slot = k % batches_per_epoch;

  std::uint64_t key = derive_key(cfg.master_seed, purpose::kBatchPerm);
  key = derive_key(key, shard.owner);
  key = derive_key(key, epoch);
  std::vector<std::size_t> perm(shard_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SplitMix64 rng(key);
  for (std::size_t i = shard_size; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next() % i);
    std::swap(perm[i - 1], perm[j]);
  }

  const std::size_t begin = slot * batch;
  const std::size_t end = std::min(begin + batch, shard_size);
  std::vector<std::size_t> rows;
  rows.reserve(end - begin);
  for (std::size_t t = begin; t < end; ++t) rows.push_back(shard.rows[perm[t]]);
  return rows;
}

}  // namespace

std::string termination_name(Termination reason) {
  switch (reason) {
    case Termination::kRoundsCompleted: return "rounds_completed";
    case Termination::kBudgetExceededFirstIteration: return "budget_exceeded_first_iteration";
    case Termination::kBudgetExhausted: return "budget_exhausted";
    case Termination::kTargetReached: return "target_reached";
  }
  return "unknown";
}

std::size_t participant_count(std::size_t n_clients, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in (0,1]");
  const auto count = static_cast<std::size_t>(
      std::llround(beta * static_cast<double>(n_clients)));
  return std::clamp<std::size_t>(count, 1, n_clients);
}

std::vector<std::size_t> sample_clients(std::size_t n_clients, double beta,
                                        std::uint64_t rng_key) {
  if (n_clients < 1) throw std::invalid_argument("sample_clients: need at least one client");
  const std::size_t count = participant_count(n_clients, beta);
  std::vector<std::size_t> pool(n_clients);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  SplitMix64 rng(rng_key);
  // partial Fisher-Yates: first `count` entries are the sample
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (n_clients - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

RoundOutcome run_round(const ModelState& state, const Dataset& train,
                       const std::vector<ClientShard>& shards,
                       const ExperimentConfig& cfg, std::size_t k) {
  if (state.dim() != cfg.model.param_count()) {
    throw std::invalid_argument("run_round: state dimension does not match model");
  }
  if (shards.size() != cfg.clients) {
    throw std::invalid_argument("run_round: shard count does not match client count");
  }
  const std::size_t d = state.dim();
  const std::uint64_t sample_key =
      derive_key(derive_key(cfg.master_seed, purpose::kClientSample), k);
  const std::vector<std::size_t> selected = sample_clients(cfg.clients, cfg.beta, sample_key);

  std::vector<double> aggregate(d, 0.0);
  double loss_sum = 0.0;
  std::uint64_t bytes = 0;
  for (std::size_t client : selected) {  // ascending order keeps sums reproducible
    const std::vector<std::size_t> rows = batch_rows(shards[client], cfg, k);
    const Batch batch = gather_batch(train, rows);
    const LossGrad lg = loss_and_grad(cfg.model, state, batch);
    loss_sum += lg.loss;
    const RoundContext ctx{cfg.master_seed, k, client};
    const UplinkMessage msg = compress(cfg.compressor, lg.grad, ctx);
    bytes += msg.byte_size;
    const std::vector<double> estimate = decompress(cfg.compressor, msg, d);
    for (std::size_t t = 0; t < d; ++t) aggregate[t] += estimate[t];
  }
  const double inv = 1.0 / static_cast<double>(selected.size());
  double norm_sq = 0.0;
  for (double& v : aggregate) {
    v *= inv;
    norm_sq += v * v;
  }

  RoundOutcome out{sgd_step(state, aggregate, cfg.eta), RoundRecord{}};
  out.record.round = k;
  out.record.train_loss = loss_sum * inv;
  out.record.round_bytes = bytes;
  out.record.grad_estimate_norm_sq = norm_sq;
  return out;
}

RoundOutcome fedpdd_round(const ModelState& state, const Dataset& train,
                          const std::vector<ClientShard>& shards,
                          const ExperimentConfig& cfg, std::size_t k) {
  ExperimentConfig pinned = cfg;
  pinned.compressor = CompressorConfig::mpdd(1);
  return run_round(state, train, shards, pinned, k);
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.clients < 1) throw std::invalid_argument("config: clients must be positive");
  if (!(cfg.beta > 0.0 && cfg.beta <= 1.0)) throw std::invalid_argument("config: beta must be in (0,1]");
  if (cfg.rounds < 1) throw std::invalid_argument("config: rounds must be positive");
  if (!(cfg.eta > 0.0)) throw std::invalid_argument("config: eta must be positive");
  if (cfg.batch < 1) throw std::invalid_argument("config: batch must be positive");
  if (cfg.eval_every < 1) throw std::invalid_argument("config: eval_every must be positive");
  if (cfg.stop.target_accuracy &&
      !(*cfg.stop.target_accuracy >= 0.0 && *cfg.stop.target_accuracy <= 1.0)) {
    throw std::invalid_argument("config: target_accuracy must be in [0,1]");
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& train,
                                const Dataset& test,
                                const std::vector<ClientShard>& shards,
                                const RoundObserver& on_round) {
  validate_config(cfg);
  if (train.size() == 0 || test.size() == 0) {
    throw std::invalid_argument("run_experiment: empty dataset");
  }

  ExperimentResult result;
  result.final_state = ModelState::zeros(cfg.model.param_count());
  if (cfg.model.arch == ModelKind::Arch::kMlp1) {
    // symmetric zero init never trains a hidden layer; use a small pinned one
    SplitMix64 rng(derive_key(cfg.master_seed, purpose::kModelInit));
    for (double& w : result.final_state.params) w = 0.1 * rng.next_gaussian();
  }

  const std::size_t per_client = uplink_bytes(cfg.compressor, result.final_state.dim());
  const std::size_t count = participant_count(cfg.clients, cfg.beta);
  const std::uint64_t round_cost = per_client * count;

  std::uint64_t cumulative = 0;
  result.reason = Termination::kRoundsCompleted;
  for (std::size_t k = 0; k < cfg.rounds; ++k) {
    if (cfg.stop.byte_budget && cumulative + round_cost > *cfg.stop.byte_budget) {
      result.reason = k == 0 ? Termination::kBudgetExceededFirstIteration
                             : Termination::kBudgetExhausted;
      break;
    }
    RoundOutcome outcome = run_round(result.final_state, train, shards, cfg, k);
    result.final_state = std::move(outcome.next_state);
    cumulative += outcome.record.round_bytes;
    outcome.record.cumulative_bytes = cumulative;

    const bool eval_point = (k + 1) % cfg.eval_every == 0 || k + 1 == cfg.rounds;
    if (eval_point) {
      const Evaluation ev = evaluate(cfg.model, result.final_state, test.inputs, test.labels);
      outcome.record.test_accuracy = ev.accuracy;
      result.final_accuracy = ev.accuracy;
      if (cfg.stop.target_accuracy && ev.accuracy >= *cfg.stop.target_accuracy) {
        if (on_round) on_round(outcome.record);
        result.records.push_back(std::move(outcome.record));
        result.reason = Termination::kTargetReached;
        result.used_bytes = cumulative;
        return result;
      }
    }
    if (on_round) on_round(outcome.record);
    result.records.push_back(std::move(outcome.record));
  }

  result.used_bytes = cumulative;
  if (result.records.empty() || !result.records.back().test_accuracy) {
    const Evaluation ev = evaluate(cfg.model, result.final_state, test.inputs, test.labels);
    result.final_accuracy = ev.accuracy;
  }
  return result;
}

}  // namespace fedmpdd
