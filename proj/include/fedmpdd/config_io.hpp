#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedmpdd/dataset.hpp"
#include "fedmpdd/federation.hpp"
#include "fedmpdd/privacy.hpp"

namespace fedmpdd {

// Config problems carry where they happened (a JSON-pointer-style path) and
// which rule broke, so the CLI can report them precisely.
struct ConfigError : std::runtime_error {
  enum class Kind { kParse, kUnknownKey, kMissingKey, kRange };

  ConfigError(Kind kind, std::string pointer, const std::string& message)
      : std::runtime_error(pointer + ": " + message), kind(kind),
        pointer(std::move(pointer)) {}

  Kind kind;
  std::string pointer;
};

struct DataPlan {
  enum class Source { kSynth, kIdx };

  Source source = Source::kSynth;
  std::size_t synth_n = 0;
  std::size_t synth_test_n = 0;
  double separation = 1.0;
  std::string train_images, train_labels, test_images, test_labels;
  PartitionMode partition = PartitionMode::kIid;
  std::uint64_t data_seed = 0;
};

struct LoadedExperiment {
  ExperimentConfig config;
  DataPlan data;
  AttackConfig attack;
  nlohmann::json echo;  // the validated document, for the config echo file
};

// Parses and validates an experiment file. Unknown keys, missing keys,
// duplicate keys and out-of-range values are all rejected.
LoadedExperiment load_config(const std::string& path);
LoadedExperiment load_config_text(const std::string& text);

struct BuiltData {
  Dataset train;
  Dataset test;
};

// Materializes the configured data source and checks it against the model.
BuiltData build_datasets(const DataPlan& plan, const ModelKind& model);

// Streams metrics rows to a CSV file, one flushed line per round, numbers at
// 17 significant digits. test_accuracy stays empty on non-evaluation rounds.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void append(const RoundRecord& record);

 private:
  struct Impl;
  Impl* impl_;
};

std::string format_double(double v);  // %.17g

std::vector<RoundRecord> read_metrics_csv(const std::string& path);

void write_summary(const std::string& path, double final_accuracy,
                   std::uint64_t used_bytes, const std::string& termination_reason);

// 8-bit binary PGM; values clamped to [0,1] and scaled to 255.
void write_pgm(const std::string& path, const RowMatrix& image);

void write_attack_csv(const std::string& path, const AttackResult& result);

}  // namespace fedmpdd
