#include "fedmpdd/config_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fedmpdd/rng.hpp"

namespace fedmpdd {
namespace {

using nlohmann::json;

// SAX pass that only checks for duplicate keys (the DOM parser keeps the
// last duplicate silently, which would mask config mistakes).
class DuplicateKeyCheck : public nlohmann::json_sax<json> {
 public:
  bool null() override { return true; }
  bool boolean(bool) override { return true; }
  bool number_integer(number_integer_t) override { return true; }
  bool number_unsigned(number_unsigned_t) override { return true; }
  bool number_float(number_float_t, const string_t&) override { return true; }
  bool string(string_t&) override { return true; }
  bool binary(binary_t&) override { return true; }
  bool start_object(std::size_t) override {
    scopes_.emplace_back();
    return true;
  }
  bool key(string_t& k) override {
    if (!scopes_.back().insert(k).second) {
      duplicate_ = k;
      return false;
    }
    return true;
  }
  bool end_object() override {
    scopes_.pop_back();
    return true;
  }
  bool start_array(std::size_t) override { return true; }
  bool end_array() override { return true; }
  bool parse_error(std::size_t, const std::string&,
                   const nlohmann::detail::exception& ex) override {
    error_ = ex.what();
    return false;
  }

  const std::optional<std::string>& duplicate() const { return duplicate_; }
  const std::optional<std::string>& error() const { return error_; }

 private:
  std::vector<std::set<std::string>> scopes_;
  std::optional<std::string> duplicate_;
  std::optional<std::string> error_;
};

json parse_strict(const std::string& text) {
  DuplicateKeyCheck check;
  if (!json::sax_parse(text, &check)) {
    if (check.duplicate()) {
      throw ConfigError(ConfigError::Kind::kParse, "/",
                        "duplicate key \"" + *check.duplicate() + "\"");
    }
    throw ConfigError(ConfigError::Kind::kParse, "/",
                      check.error().value_or("malformed JSON"));
  }
  return json::parse(text);
}

void require_object(const json& node, const std::string& path,
                    const std::vector<std::string>& known,
                    const std::vector<std::string>& required) {
  if (!node.is_object()) {
    throw ConfigError(ConfigError::Kind::kParse, path, "expected an object");
  }
  for (const auto& [key, _] : node.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError(ConfigError::Kind::kUnknownKey, path + "/" + key, "unknown key");
    }
  }
  for (const auto& key : required) {
    if (!node.contains(key)) {
      throw ConfigError(ConfigError::Kind::kMissingKey, path + "/" + key, "missing key");
    }
  }
}

double get_number(const json& node, const std::string& path, const char* key) {
  const json& v = node.at(key);
  if (!v.is_number()) {
    throw ConfigError(ConfigError::Kind::kRange, path + "/" + key, "expected a number");
  }
  return v.get<double>();
}

std::uint64_t get_uint(const json& node, const std::string& path, const char* key) {
  const json& v = node.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(ConfigError::Kind::kRange, path + "/" + key,
                      "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::string get_string(const json& node, const std::string& path, const char* key) {
  const json& v = node.at(key);
  if (!v.is_string()) {
    throw ConfigError(ConfigError::Kind::kRange, path + "/" + key, "expected a string");
  }
  return v.get<std::string>();
}

[[noreturn]] void range_error(const std::string& path, const char* key,
                              const std::string& message) {
  throw ConfigError(ConfigError::Kind::kRange, path + "/" + std::string(key), message);
}

ModelKind load_model(const json& node) {
  require_object(node, "/model", {"kind", "classes", "input_dim", "hidden"},
                 {"kind", "classes", "input_dim"});
  const std::string kind = get_string(node, "/model", "kind");
  const auto classes = static_cast<int>(get_uint(node, "/model", "classes"));
  const auto input_dim = static_cast<int>(get_uint(node, "/model", "input_dim"));
  if (classes < 2) range_error("/model", "classes", "need at least 2 classes");
  if (input_dim < 1) range_error("/model", "input_dim", "need input_dim >= 1");
  if (kind == "logistic") {
    if (node.contains("hidden")) range_error("/model", "hidden", "not valid for logistic");
    return ModelKind::logistic(classes, input_dim);
  }
  if (kind == "mlp1") {
    if (!node.contains("hidden")) {
      throw ConfigError(ConfigError::Kind::kMissingKey, "/model/hidden", "missing key");
    }
    const auto hidden = static_cast<int>(get_uint(node, "/model", "hidden"));
    if (hidden < 1) range_error("/model", "hidden", "need hidden >= 1");
    return ModelKind::mlp1(hidden, classes, input_dim);
  }
  range_error("/model", "kind", "expected \"logistic\" or \"mlp1\"");
}

DataPlan load_data(const json& node) {
  require_object(node, "/data", {"source", "partition", "synth", "idx"},
                 {"source", "partition"});
  DataPlan plan;
  const std::string source = get_string(node, "/data", "source");
  const std::string partition = get_string(node, "/data", "partition");
  if (partition == "iid") {
    plan.partition = PartitionMode::kIid;
  } else if (partition == "two_class") {
    plan.partition = PartitionMode::kTwoClass;
  } else {
    range_error("/data", "partition", "expected \"iid\" or \"two_class\"");
  }

  if (source == "synth") {
    plan.source = DataPlan::Source::kSynth;
    if (!node.contains("synth")) {
      throw ConfigError(ConfigError::Kind::kMissingKey, "/data/synth", "missing key");
    }
    const json& synth = node.at("synth");
    require_object(synth, "/data/synth", {"n", "test_n", "separation"},
                   {"n", "test_n", "separation"});
    plan.synth_n = get_uint(synth, "/data/synth", "n");
    plan.synth_test_n = get_uint(synth, "/data/synth", "test_n");
    plan.separation = get_number(synth, "/data/synth", "separation");
    if (plan.synth_n < 1) range_error("/data/synth", "n", "need n >= 1");
    if (plan.synth_test_n < 1) range_error("/data/synth", "test_n", "need test_n >= 1");
    if (plan.separation < 0.0) range_error("/data/synth", "separation", "must be >= 0");
  } else if (source == "idx") {
    plan.source = DataPlan::Source::kIdx;
    if (!node.contains("idx")) {
      throw ConfigError(ConfigError::Kind::kMissingKey, "/data/idx", "missing key");
    }
    const json& idx = node.at("idx");
    require_object(idx, "/data/idx",
                   {"train_images", "train_labels", "test_images", "test_labels"},
                   {"train_images", "train_labels", "test_images", "test_labels"});
    plan.train_images = get_string(idx, "/data/idx", "train_images");
    plan.train_labels = get_string(idx, "/data/idx", "train_labels");
    plan.test_images = get_string(idx, "/data/idx", "test_images");
    plan.test_labels = get_string(idx, "/data/idx", "test_labels");
  } else {
    range_error("/data", "source", "expected \"synth\" or \"idx\"");
  }
  return plan;
}

CompressorConfig load_compressor(const json& node) {
  require_object(node, "/compressor", {"kind", "m", "bits", "k", "noise", "scale"},
                 {"kind"});
  const std::string kind = get_string(node, "/compressor", "kind");
  const auto forbid = [&](const char* key) {
    if (node.contains(key)) {
      range_error("/compressor", key, "not valid for compressor kind \"" + kind + "\"");
    }
  };
  if (kind == "full") {
    forbid("m"); forbid("bits"); forbid("k"); forbid("noise"); forbid("scale");
    return CompressorConfig::full();
  }
  if (kind == "mpdd") {
    forbid("bits"); forbid("k"); forbid("noise"); forbid("scale");
    if (!node.contains("m")) throw ConfigError(ConfigError::Kind::kMissingKey, "/compressor/m", "missing key");
    const std::uint64_t m = get_uint(node, "/compressor", "m");
    if (m < 1) range_error("/compressor", "m", "need m >= 1");
    return CompressorConfig::mpdd(m);
  }
  if (kind == "qsgd") {
    forbid("m"); forbid("k"); forbid("noise"); forbid("scale");
    if (!node.contains("bits")) throw ConfigError(ConfigError::Kind::kMissingKey, "/compressor/bits", "missing key");
    const auto bits = static_cast<int>(get_uint(node, "/compressor", "bits"));
    if (bits < 1 || bits > 16) range_error("/compressor", "bits", "need bits in [1,16]");
    return CompressorConfig::qsgd(bits);
  }
  if (kind == "topk") {
    forbid("m"); forbid("bits"); forbid("noise"); forbid("scale");
    if (!node.contains("k")) throw ConfigError(ConfigError::Kind::kMissingKey, "/compressor/k", "missing key");
    const std::uint64_t k = get_uint(node, "/compressor", "k");
    if (k < 1) range_error("/compressor", "k", "need k >= 1");
    return CompressorConfig::topk(k);
  }
  if (kind == "ldp_full") {
    forbid("m"); forbid("bits"); forbid("k");
    if (!node.contains("noise")) throw ConfigError(ConfigError::Kind::kMissingKey, "/compressor/noise", "missing key");
    if (!node.contains("scale")) throw ConfigError(ConfigError::Kind::kMissingKey, "/compressor/scale", "missing key");
    const std::string noise = get_string(node, "/compressor", "noise");
    const double scale = get_number(node, "/compressor", "scale");
    if (scale < 0.0) range_error("/compressor", "scale", "must be >= 0");
    if (noise == "gaussian") return CompressorConfig::ldp(LdpNoise::kGaussian, scale);
    if (noise == "laplace") return CompressorConfig::ldp(LdpNoise::kLaplace, scale);
    range_error("/compressor", "noise", "expected \"gaussian\" or \"laplace\"");
  }
  range_error("/compressor", "kind", "unknown compressor kind \"" + kind + "\"");
}

AttackConfig load_attack(const json& node) {
  AttackConfig cfg;
  require_object(node, "/attack",
                 {"iterations", "lr", "label_known", "init_seed", "finite_diff_h"}, {});
  if (node.contains("iterations")) {
    cfg.iterations = get_uint(node, "/attack", "iterations");
    if (cfg.iterations < 1) range_error("/attack", "iterations", "need iterations >= 1");
  }
  if (node.contains("lr")) {
    cfg.lr = get_number(node, "/attack", "lr");
    if (!(cfg.lr > 0.0)) range_error("/attack", "lr", "must be positive");
  }
  if (node.contains("label_known")) {
    const json& v = node.at("label_known");
    if (!v.is_boolean()) range_error("/attack", "label_known", "expected a boolean");
    cfg.label_known = v.get<bool>();
  }
  if (node.contains("init_seed")) cfg.init_seed = get_uint(node, "/attack", "init_seed");
  if (node.contains("finite_diff_h")) {
    cfg.finite_diff_h = get_number(node, "/attack", "finite_diff_h");
    if (!(cfg.finite_diff_h > 0.0)) range_error("/attack", "finite_diff_h", "must be positive");
  }
  return cfg;
}

}  // namespace

LoadedExperiment load_config_text(const std::string& text) {
  const json doc = parse_strict(text);
  require_object(doc, "",
                 {"model", "data", "federation", "compressor", "stop", "seeds", "attack"},
                 {"model", "data", "federation", "compressor", "seeds"});

  LoadedExperiment out;
  out.config.model = load_model(doc.at("model"));
  out.data = load_data(doc.at("data"));
  out.config.compressor = load_compressor(doc.at("compressor"));

  const json& fed = doc.at("federation");
  require_object(fed, "/federation",
                 {"clients", "beta", "rounds", "eta", "batch", "eval_every"},
                 {"clients", "beta", "rounds", "eta", "batch"});
  out.config.clients = get_uint(fed, "/federation", "clients");
  out.config.beta = get_number(fed, "/federation", "beta");
  out.config.rounds = get_uint(fed, "/federation", "rounds");
  out.config.eta = get_number(fed, "/federation", "eta");
  out.config.batch = get_uint(fed, "/federation", "batch");
  out.config.eval_every = fed.contains("eval_every")
                              ? get_uint(fed, "/federation", "eval_every")
                              : 1;
  if (out.config.clients < 1) range_error("/federation", "clients", "need clients >= 1");
  if (!(out.config.beta > 0.0 && out.config.beta <= 1.0)) {
    range_error("/federation", "beta", "must be in (0,1]");
  }
  if (out.config.rounds < 1) range_error("/federation", "rounds", "need rounds >= 1");
  if (!(out.config.eta > 0.0)) range_error("/federation", "eta", "must be positive");
  if (out.config.batch < 1) range_error("/federation", "batch", "need batch >= 1");
  if (out.config.eval_every < 1) range_error("/federation", "eval_every", "need eval_every >= 1");

  if (doc.contains("stop")) {
    const json& stop = doc.at("stop");
    require_object(stop, "/stop", {"byte_budget", "target_accuracy"}, {});
    if (stop.contains("byte_budget")) {
      out.config.stop.byte_budget = get_uint(stop, "/stop", "byte_budget");
    }
    if (stop.contains("target_accuracy")) {
      const double target = get_number(stop, "/stop", "target_accuracy");
      if (target < 0.0 || target > 1.0) range_error("/stop", "target_accuracy", "must be in [0,1]");
      out.config.stop.target_accuracy = target;
    }
  }

  const json& seeds = doc.at("seeds");
  require_object(seeds, "/seeds", {"master", "data"}, {"master", "data"});
  out.config.master_seed = get_uint(seeds, "/seeds", "master");
  out.data.data_seed = get_uint(seeds, "/seeds", "data");

  if (doc.contains("attack")) out.attack = load_attack(doc.at("attack"));

  out.echo = doc;
  return out;
}

LoadedExperiment load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(ConfigError::Kind::kParse, "/", "cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_config_text(buffer.str());
}

BuiltData build_datasets(const DataPlan& plan, const ModelKind& model) {
  BuiltData out;
  if (plan.source == DataPlan::Source::kSynth) {
    out.train = synth_logistic(plan.synth_n, model.input_dim, model.classes,
                               plan.separation, plan.data_seed);
    out.test = synth_logistic(plan.synth_test_n, model.input_dim, model.classes,
                              plan.separation, derive_key(plan.data_seed, 0x7e57ull));
    return out;
  }
  out.train = dataset_from_idx(parse_idx_file(plan.train_images),
                               parse_idx_file(plan.train_labels));
  out.test = dataset_from_idx(parse_idx_file(plan.test_images),
                              parse_idx_file(plan.test_labels));
  for (const Dataset* ds : {&out.train, &out.test}) {
    if (ds->inputs.cols != static_cast<std::size_t>(model.input_dim)) {
      throw ConfigError(ConfigError::Kind::kRange, "/model/input_dim",
                        "dataset width " + std::to_string(ds->inputs.cols) +
                            " does not match input_dim");
    }
    if (ds->class_count > model.classes) {
      throw ConfigError(ConfigError::Kind::kRange, "/model/classes",
                        "dataset has more classes than the model");
    }
  }
  out.train.class_count = model.classes;
  out.test.class_count = model.classes;
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct MetricsWriter::Impl {
  std::ofstream out;
};

MetricsWriter::MetricsWriter(const std::string& path) : impl_(new Impl) {
  impl_->out.open(path, std::ios::trunc);
  if (!impl_->out) {
    delete impl_;
    throw std::runtime_error("cannot open metrics file " + path);
  }
  impl_->out << "round,train_loss,test_accuracy,round_bytes,cumulative_bytes\n";
  impl_->out.flush();
}

MetricsWriter::~MetricsWriter() { delete impl_; }

void MetricsWriter::append(const RoundRecord& record) {
  impl_->out << record.round << ',' << format_double(record.train_loss) << ',';
  if (record.test_accuracy) impl_->out << format_double(*record.test_accuracy);
  impl_->out << ',' << record.round_bytes << ',' << record.cumulative_bytes << '\n';
  impl_->out.flush();  // partial metrics survive a crash mid-run
}

std::vector<RoundRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics file is empty");
  if (line != "round,train_loss,test_accuracy,round_bytes,cumulative_bytes") {
    throw std::runtime_error("unexpected metrics header");
  }
  std::vector<RoundRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t pos = 0; pos <= line.size(); ++pos) {
      if (pos == line.size() || line[pos] == ',') {
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
      }
    }
    if (fields.size() != 5) throw std::runtime_error("malformed metrics row");
    RoundRecord r;
    r.round = std::stoull(fields[0]);
    r.train_loss = std::stod(fields[1]);
    if (!fields[2].empty()) r.test_accuracy = std::stod(fields[2]);
    r.round_bytes = std::stoull(fields[3]);
    r.cumulative_bytes = std::stoull(fields[4]);
    records.push_back(r);
  }
  return records;
}

void write_summary(const std::string& path, double final_accuracy,
                   std::uint64_t used_bytes, const std::string& termination_reason) {
  nlohmann::json doc;
  doc["final_accuracy"] = final_accuracy;
  doc["used_bytes"] = used_bytes;
  doc["termination_reason"] = termination_reason;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open summary file " + path);
  out << doc.dump(2) << '\n';
}

void write_pgm(const std::string& path, const RowMatrix& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open PGM file " + path);
  out << "P5\n" << image.cols << ' ' << image.rows << "\n255\n";
  for (double v : image.data) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    out.put(static_cast<char>(static_cast<int>(clamped * 255.0 + 0.5)));
  }
}

void write_attack_csv(const std::string& path, const AttackResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open attack csv " + path);
  out << "iteration,matching_loss,input_mse\n";
  for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
    out << i << ',' << format_double(result.loss_history[i]) << ','
        << format_double(result.mse_history[i]) << '\n';
  }
}

}  // namespace fedmpdd
