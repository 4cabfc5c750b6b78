// fedmpdd command line: run experiments, verify the estimator laws, mount a
// gradient-matching attack, and sweep a compressor parameter.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fedmpdd/config_io.hpp"
#include "fedmpdd/projection.hpp"
#include "fedmpdd/rng.hpp"

namespace fs = std::filesystem;
using namespace fedmpdd;

namespace {

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_vector(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw ValidationFailure("expected a comma-separated list of numbers");
  return out;
}

// Compressor override spec, e.g. "full", "mpdd:m=4", "qsgd:bits=8",
// "topk:k=10", "ldp_full:noise=gaussian,scale=0.5".
CompressorConfig parse_compressor_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  std::map<std::string, std::string> opts;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ValidationFailure("bad compressor option: " + item);
      opts[item.substr(0, eq)] = item.substr(eq + 1);
    }
  }
  const auto need = [&](const char* key) -> std::string {
    auto it = opts.find(key);
    if (it == opts.end()) {
      throw ValidationFailure(std::string("compressor spec needs ") + key);
    }
    return it->second;
  };
  if (kind == "full") return CompressorConfig::full();
  if (kind == "mpdd") return CompressorConfig::mpdd(std::stoull(need("m")));
  if (kind == "qsgd") return CompressorConfig::qsgd(std::stoi(need("bits")));
  if (kind == "topk") return CompressorConfig::topk(std::stoull(need("k")));
  if (kind == "ldp_full") {
    const std::string noise = need("noise");
    if (noise != "gaussian" && noise != "laplace") {
      throw ValidationFailure("compressor noise must be gaussian or laplace");
    }
    return CompressorConfig::ldp(
        noise == "gaussian" ? LdpNoise::kGaussian : LdpNoise::kLaplace,
        std::stod(need("scale")));
  }
  throw ValidationFailure("unknown compressor kind: " + kind);
}

void write_config_echo(const fs::path& out_dir, const nlohmann::json& echo) {
  std::ofstream out(out_dir / "config.json", std::ios::trunc);
  out << echo.dump(2) << '\n';
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const LoadedExperiment loaded = load_config(config_path);
  validate_config(loaded.config);
  const BuiltData data = build_datasets(loaded.data, loaded.config.model);
  const std::vector<ClientShard> shards =
      partition(data.train, loaded.config.clients, loaded.data.partition,
                loaded.data.data_seed);

  fs::create_directories(out_dir);
  write_config_echo(out_dir, loaded.echo);

  // Stream rounds straight into the CSV so an interrupted run still leaves
  // usable metrics behind.
  MetricsWriter metrics((fs::path(out_dir) / "metrics.csv").string());
  ExperimentResult result =
      run_experiment(loaded.config, data.train, data.test, shards,
                     [&](const RoundRecord& record) { metrics.append(record); });
  write_summary((fs::path(out_dir) / "summary.json").string(), result.final_accuracy,
                result.used_bytes, termination_name(result.reason));
  std::cout << "rounds=" << result.records.size()
            << " used_bytes=" << result.used_bytes
            << " final_accuracy=" << result.final_accuracy
            << " reason=" << termination_name(result.reason) << '\n';
  return 0;
}

struct VerifyRow {
  std::string check;
  double target;
  double estimate;
  double std_error;
  bool pass;
};

void print_verify_table(const std::vector<VerifyRow>& rows) {
  std::printf("%-28s %14s %14s %12s %6s\n", "check", "target", "estimate", "stderr", "result");
  for (const auto& row : rows) {
    std::printf("%-28s %14.6g %14.6g %12.4g %6s\n", row.check.c_str(), row.target,
                row.estimate, row.std_error, row.pass ? "PASS" : "FAIL");
  }
}

int cmd_verify(const std::string& suite, std::size_t trials, std::uint64_t seed,
               std::size_t d, std::size_t m, std::size_t rounds_T,
               const std::string& g_csv, double tau, double eps, double delta,
               double jl_c) {
  std::vector<VerifyRow> rows;
  const auto add_mc = [&](const std::string& name, const VerifierReport& report) {
    rows.push_back({name, report.analytic, report.estimate, report.std_error,
                    report.within_sigma(4.0)});
  };

  if (suite == "recon" || suite == "all") {
    if (suite == "recon" && (d != 0 || m != 0)) {
      const std::size_t dd = d ? d : 101, mm = m ? m : 10;
      add_mc("recon(d=" + std::to_string(dd) + ",m=" + std::to_string(mm) + ")",
             verify_relative_recon_error(dd, mm, std::nullopt, trials ? trials : 100000, seed));
    } else {
      for (const auto& [dd, mm] : std::vector<std::pair<std::size_t, std::size_t>>{
               {50, 5}, {101, 10}, {200, 50}}) {
        add_mc("recon(d=" + std::to_string(dd) + ",m=" + std::to_string(mm) + ")",
               verify_relative_recon_error(dd, mm, std::nullopt, trials ? trials : 100000, seed));
      }
    }
  }
  if (suite == "variance" || suite == "all") {
    const std::vector<double> g = g_csv.empty() ? std::vector<double>{1.0, 2.0}
                                                : parse_vector(g_csv);
    const VarianceGapReport report =
        verify_variance_gap(g, trials ? trials : 1000000, seed);
    rows.push_back({"variance_gap_total", report.analytic_total, report.estimate_total,
                    report.std_error_total,
                    std::abs(report.estimate_total - report.analytic_total) <=
                        4.0 * report.std_error_total});
  }
  if (suite == "rank" || suite == "all") {
    const std::size_t dd = d ? d : 50, mm = m ? m : 10, tt = rounds_T ? rounds_T : 3;
    std::vector<std::uint32_t> wire_seeds;
    SplitMix64 seeder(derive_key(seed, 0x5eedull));
    for (std::size_t t = 0; t < tt; ++t) {
      wire_seeds.push_back(static_cast<std::uint32_t>(seeder.next() >> 32));
    }
    const RankReport report = verify_multi_round_rank(wire_seeds, mm, dd);
    const std::size_t expected = std::min(tt * mm, dd);
    const bool pass = report.rank == expected &&
                      report.underdetermined == (tt * mm < dd);
    rows.push_back({"rank(T=" + std::to_string(tt) + ",m=" + std::to_string(mm) +
                        ",d=" + std::to_string(dd) + ")" +
                        (report.underdetermined ? " underdet" : " determined"),
                    static_cast<double>(expected), static_cast<double>(report.rank),
                    0.0, pass});
  }
  if (suite == "ldp" || suite == "all") {
    const std::vector<double> g = g_csv.empty()
                                      ? std::vector<double>{1.0, 1.0, 1.0, 1.0}
                                      : parse_vector(g_csv);
    add_mc("ldp_relative_error",
           verify_ldp_relative_error(g, tau, trials ? trials : 100000, seed));
  }
  if (suite == "jl" || suite == "all") {
    const std::size_t dd = (suite == "jl" && d) ? d : 512;
    const JlReport report =
        verify_jl_norm_bound(dd, eps, delta, jl_c, trials && suite == "jl" ? trials : 10000, seed);
    rows.push_back({"jl_norm_bound(m=" + std::to_string(report.m) + ")", 0.95,
                    report.pass_rate, 0.0, report.pass_rate >= 0.95});
  }
  if (rows.empty()) throw ValidationFailure("unknown verify suite: " + suite);

  print_verify_table(rows);
  for (const auto& row : rows) {
    if (!row.pass) return 2;
  }
  return 0;
}

int cmd_attack(const std::string& config_path, const std::string& compressor_spec,
               const std::string& out_dir) {
  const LoadedExperiment loaded = load_config(config_path);
  validate_config(loaded.config);
  CompressorConfig compressor = loaded.config.compressor;
  if (!compressor_spec.empty()) compressor = parse_compressor_spec(compressor_spec);

  const BuiltData data = build_datasets(loaded.data, loaded.config.model);
  const ModelKind& model = loaded.config.model;

  // Deterministic single-sample target and a small pinned model state.
  const std::uint64_t attack_key = derive_key(loaded.config.master_seed, purpose::kAttack);
  const std::size_t target_row =
      static_cast<std::size_t>(attack_key % data.train.size());
  const std::vector<std::size_t> rows{target_row};
  const Batch target = gather_batch(data.train, rows);

  ModelState state = ModelState::zeros(model.param_count());
  SplitMix64 init_rng(derive_key(loaded.config.master_seed, purpose::kModelInit));
  for (double& w : state.params) w = 0.1 * init_rng.next_gaussian();

  const LossGrad lg = loss_and_grad(model, state, target);
  const RoundContext ctx{loaded.config.master_seed, 0, 0};
  const UplinkMessage msg = compress(compressor, lg.grad, ctx);
  const std::vector<double> observed = decompress(compressor, msg, state.dim());

  const AttackResult result = dlg_attack(model, state, observed, target, loaded.attack);

  fs::create_directories(out_dir);
  write_config_echo(out_dir, loaded.echo);
  write_attack_csv((fs::path(out_dir) / "attack.csv").string(), result);

  // Image-shaped export: square inputs render as sqrt(p) x sqrt(p).
  const std::size_t p = target.inputs.cols;
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(p))));
  const std::size_t h = side * side == p ? side : 1;
  const std::size_t w = side * side == p ? side : p;
  RowMatrix truth_img(h, w), recon_img(h, w);
  for (std::size_t i = 0; i < p; ++i) {
    truth_img.data[i] = std::min(1.0, std::max(0.0, target.inputs.data[i]));
    recon_img.data[i] = std::min(1.0, std::max(0.0, result.reconstructed[i]));
  }
  write_pgm((fs::path(out_dir) / "reconstructed.pgm").string(), recon_img);
  write_pgm((fs::path(out_dir) / "target.pgm").string(), truth_img);
  const double score = ssim(truth_img, recon_img);

  nlohmann::json summary;
  summary["input_mse"] = result.input_mse;
  summary["ssim"] = score;
  summary["best_matching_loss"] = result.best_matching_loss;
  std::ofstream out(fs::path(out_dir) / "summary.json", std::ios::trunc);
  out << summary.dump(2) << '\n';
  std::cout << "input_mse=" << result.input_mse << " ssim=" << score << '\n';
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param,
              const std::string& values_csv, const std::string& out_dir,
              bool parallel) {
  const LoadedExperiment loaded = load_config(config_path);
  validate_config(loaded.config);
  const std::vector<double> values = parse_vector(values_csv);

  const CompressorKind kind = loaded.config.compressor.kind;
  if (param == "m" && kind != CompressorKind::kMpdd) {
    throw ValidationFailure("sweep parameter m needs an mpdd compressor");
  }
  if (param == "tau" && kind != CompressorKind::kLdpFull) {
    throw ValidationFailure("sweep parameter tau needs an ldp_full compressor");
  }
  if (param == "bits" && kind != CompressorKind::kQsgd) {
    throw ValidationFailure("sweep parameter bits needs a qsgd compressor");
  }
  if (param != "m" && param != "tau" && param != "bits") {
    throw ValidationFailure("unknown sweep parameter: " + param);
  }

  fs::create_directories(out_dir);
  struct SweepRow {
    double value;
    double final_accuracy;
    std::uint64_t used_bytes;
  };
  std::vector<SweepRow> table(values.size());

  const auto run_value = [&](std::size_t idx) {
    LoadedExperiment variant = loaded;
    if (param == "m") variant.config.compressor.mpdd_directions = static_cast<std::size_t>(values[idx]);
    if (param == "tau") variant.config.compressor.ldp_scale = values[idx];
    if (param == "bits") variant.config.compressor.qsgd_bits = static_cast<int>(values[idx]);

    std::ostringstream name;
    name << param << '_' << values[idx];
    const fs::path sub = fs::path(out_dir) / name.str();
    fs::create_directories(sub);
    write_config_echo(sub, variant.echo);

    const BuiltData data = build_datasets(variant.data, variant.config.model);
    const std::vector<ClientShard> shards =
        partition(data.train, variant.config.clients, variant.data.partition,
                  variant.data.data_seed);
    MetricsWriter metrics((sub / "metrics.csv").string());
    const ExperimentResult result =
        run_experiment(variant.config, data.train, data.test, shards,
                       [&](const RoundRecord& record) { metrics.append(record); });
    write_summary((sub / "summary.json").string(), result.final_accuracy,
                  result.used_bytes, termination_name(result.reason));
    table[idx] = {values[idx], result.final_accuracy, result.used_bytes};
  };

  if (parallel) {
    std::vector<std::thread> workers;
    workers.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) workers.emplace_back(run_value, i);
    for (auto& worker : workers) worker.join();
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) run_value(i);
  }

  std::ofstream out(fs::path(out_dir) / "sweep.csv", std::ios::trunc);
  out << "value,final_accuracy,used_bytes\n";
  for (const SweepRow& row : table) {
    out << format_double(row.value) << ',' << format_double(row.final_accuracy) << ','
        << row.used_bytes << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated learning with seed-replayed projected gradient codecs"};
  app.require_subcommand(1);

  std::string config_path, out_dir, suite, g_csv, compressor_spec, param, values_csv;
  std::size_t trials = 0, d = 0, m = 0, rounds_T = 0;
  std::uint64_t seed = 1;
  double tau = 1.0, eps = 0.2, delta = 0.05, jl_c = 8.0;
  bool parallel = false;

  CLI::App* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment JSON")->required();
  run->add_option("--out", out_dir, "output directory")->required();

  CLI::App* verify = app.add_subcommand("verify", "statistical law verifiers");
  verify->add_option("suite", suite, "all|recon|variance|rank|ldp|jl")->required();
  verify->add_option("--trials", trials);
  verify->add_option("--seed", seed);
  verify->add_option("--d", d);
  verify->add_option("--m", m);
  verify->add_option("--T", rounds_T);
  verify->add_option("--g", g_csv, "gradient vector, comma separated");
  verify->add_option("--tau", tau);
  verify->add_option("--eps", eps);
  verify->add_option("--delta", delta);
  verify->add_option("--c", jl_c);

  CLI::App* attack = app.add_subcommand("attack", "gradient-matching inversion attack");
  attack->add_option("--config", config_path, "experiment JSON")->required();
  attack->add_option("--compressor", compressor_spec, "override, e.g. mpdd:m=4");
  attack->add_option("--out", out_dir, "output directory")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "sweep one compressor parameter");
  sweep->add_option("--config", config_path, "experiment JSON")->required();
  sweep->add_option("--param", param, "m|tau|bits")->required();
  sweep->add_option("--values", values_csv, "comma-separated values")->required();
  sweep->add_option("--out", out_dir, "output directory")->required();
  sweep->add_flag("--parallel", parallel, "run values on threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir);
    if (verify->parsed()) {
      return cmd_verify(suite, trials, seed, d, m, rounds_T, g_csv, tau, eps, delta, jl_c);
    }
    if (attack->parsed()) return cmd_attack(config_path, compressor_spec, out_dir);
    if (sweep->parsed()) return cmd_sweep(config_path, param, values_csv, out_dir, parallel);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationFailure& e) {
    std::cerr << "invalid arguments: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
