#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedmpdd/compressor.hpp"
#include "fedmpdd/dataset.hpp"
#include "fedmpdd/model.hpp"

namespace fedmpdd {

struct StopRule {
  std::optional<std::uint64_t> byte_budget;
  std::optional<double> target_accuracy;
};

struct ExperimentConfig {
  ModelKind model;
  std::size_t clients = 1;  // N
  double beta = 1.0;        // participation rate in (0,1]
  std::size_t rounds = 1;   // K
  double eta = 0.1;
  std::size_t batch = 1;
  CompressorConfig compressor;
  std::uint64_t master_seed = 0;
  StopRule stop;
  std::size_t eval_every = 1;
};

struct RoundRecord {
  std::size_t round = 0;
  double train_loss = 0.0;
  std::optional<double> test_accuracy;  // set at evaluation rounds
  std::uint64_t round_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  double grad_estimate_norm_sq = 0.0;
};

enum class Termination {
  kRoundsCompleted,
  kBudgetExceededFirstIteration,
  kBudgetExhausted,
  kTargetReached,
};

std::string termination_name(Termination reason);

struct ExperimentResult {
  std::vector<RoundRecord> records;
  Termination reason = Termination::kRoundsCompleted;
  ModelState final_state;
  double final_accuracy = 0.0;
  std::uint64_t used_bytes = 0;
};

// round(beta * N), at least one.
std::size_t participant_count(std::size_t n_clients, double beta);

// Uniform without replacement, ascending, deterministic per rng_key.
std::vector<std::size_t> sample_clients(std::size_t n_clients, double beta,
                                        std::uint64_t rng_key);

struct RoundOutcome {
  ModelState next_state;
  RoundRecord record;
};

// One FedSGD-skeleton round: sample clients, per-client mini-batch gradient,
// compress, server-side decompress, average in ascending client order, then
// one SGD step. Each client walks a seed-shuffled permutation of its shard
// keyed by the round index, so rounds are pure functions of their arguments.
RoundOutcome run_round(const ModelState& state, const Dataset& train,
                       const std::vector<ClientShard>& shards,
                       const ExperimentConfig& cfg, std::size_t k);

// run_round with the compressor pinned to a single projected direction
// (m = 1), the two-scalar-per-client special case.
RoundOutcome fedpdd_round(const ModelState& state, const Dataset& train,
                          const std::vector<ClientShard>& shards,
                          const ExperimentConfig& cfg, std::size_t k);

// Observer invoked with each finished round's record, before the run moves
// on; lets callers persist partial results as they appear.
using RoundObserver = std::function<void(const RoundRecord&)>;

// Full training run. Stops at K rounds, when the next round would not fit in
// the byte budget (before running it), or when the target accuracy is reached
// at an evaluation point. Deterministic given (cfg, data, master_seed).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& train,
                                const Dataset& test,
                                const std::vector<ClientShard>& shards,
                                const RoundObserver& on_round = {});

void validate_config(const ExperimentConfig& cfg);

}  // namespace fedmpdd
