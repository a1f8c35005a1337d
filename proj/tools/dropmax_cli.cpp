// dropmax: train, evaluate and self-check the DropMax classifier.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dropmax/config.hpp"
#include "dropmax/diagnostics.hpp"
#include "dropmax/error.hpp"
#include "dropmax/harness.hpp"

namespace fs = std::filesystem;
using namespace dropmax;

namespace {

constexpr double kGradcheckTolerance = 1e-5;

TrainConfig load_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                const std::string& model, const std::string& data_dir) {
  TrainConfig config = load_config(path);
  if (seed) config.seed = *seed;
  if (!model.empty()) config.model.kind = parse_model_kind(model);
  if (!data_dir.empty()) config.data_dir = data_dir;
  config.validate();
  return config;
}

int run_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& model,
              const std::string& data_dir, const fs::path& out, bool quiet) {
  TrainConfig config = load_with_overrides(config_path, seed, model, data_dir);
  fs::create_directories(out);
  save_config(out / "config.txt", config);
  const DataBundle data = load_data(config);
  Classifier classifier(config.model, data.train.dim(), data.train.num_classes, config.seed);
  TrainResult result;
  try {
    result = train(config, classifier, data, quiet ? nullptr : &std::cerr);
  } catch (const DivergenceError& e) {
    std::ofstream(out / "divergence.txt") << e.what() << "\n";
    throw;
  }
  export_metrics(result.records, out / "metrics.csv", MetricsFormat::csv);
  export_metrics(result.records, out / "metrics.json", MetricsFormat::json);
  save_checkpoint(out / "checkpoint.bin", classifier, config.digest());
  std::cout << to_string(config.model.kind) << " seed " << config.seed << ": best epoch " << result.best_epoch
            << ", steps " << result.steps << (result.early_stopped ? " (early stop)" : "") << ", val "
            << result.final.val_err << "%, test " << result.final.test_err << "%\n";
  return 0;
}

int run_eval(const fs::path& checkpoint, std::string config_path, const std::string& predictor_name,
             int samples, const std::string& split, const std::string& dump, const std::string& data_dir) {
  if (config_path.empty()) config_path = (checkpoint.parent_path() / "config.txt").string();
  TrainConfig config = load_with_overrides(config_path, std::nullopt, "", data_dir);
  const Predictor predictor = predictor_name == "mc" ? Predictor::mc : Predictor::mean;
  const DataBundle data = load_data(config);
  Classifier classifier(config.model, data.train.dim(), data.train.num_classes, config.seed);
  load_checkpoint(checkpoint, classifier, config.digest());
  const Dataset& target = split == "train" ? data.train : split == "val" ? data.val : data.test;
  const EvalResult result = evaluate(classifier, target, predictor, samples, config.seed);
  std::cout << split << " error " << result.error_pct << "% (" << predictor_name << ", N=" << target.size()
            << "), mean cross-entropy " << result.mean_ce << "\n";
  if (!dump.empty()) export_predictions(dump, target, result);
  return 0;
}

int run_gradcheck(const std::string& model, std::uint64_t seed) {
  std::vector<ModelKind> kinds;
  if (model.empty() || model == "all") {
    kinds = {ModelKind::softmax,      ModelKind::sampled, ModelKind::random_dropmax, ModelKind::det_attention,
             ModelKind::det_dropmax, ModelKind::dropmax, ModelKind::dropmax_qp};
  } else {
    kinds = {parse_model_kind(model)};
  }
  bool ok = true;
  for (ModelKind kind : kinds) {
    ModelSpec spec;
    spec.kind = kind;
    ToyProblem toy;
    toy.seed = seed;
    const auto report = gradcheck_model(spec, toy);
    for (const auto& e : report.entries) {
      const bool pass = e.max_rel_error < kGradcheckTolerance;
      ok = ok && pass;
      std::cout << (pass ? "PASS " : "FAIL ") << to_string(kind) << " " << e.name << " ("
                << to_string(e.group) << ", " << e.coords_checked << " coords) max rel error "
                << e.max_rel_error << "\n";
    }
  }
  return ok ? 0 : 1;
}

int run_oracle(std::uint64_t seed) {
  OracleSuiteOptions options;
  options.seed = seed;
  bool ok = true;
  for (const auto& check : run_oracle_suite(options)) {
    ok = ok && check.passed;
    std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << "\n";
  }
  return ok ? 0 : 1;
}

int run_compare_cmd(const fs::path& dir, const fs::path& out, const std::string& data_dir, bool quiet) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".cfg" || ext == ".txt" || ext == ".conf")) files.push_back(entry.path());
  }
  if (files.empty()) throw ConfigError("no config files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<TrainConfig> configs;
  for (const auto& f : files) configs.push_back(load_with_overrides(f.string(), std::nullopt, "", data_dir));

  const CompareResult result = run_compare(configs, quiet ? nullptr : &std::cerr);
  const std::string table = format_summary(result);
  std::cout << table;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(out / "summary.md") << table;
    std::ofstream runs(out / "runs.csv");
    runs << "model,seed,weight_decay,train_ce,test_ce,train_err,val_err,test_err\n";
    for (const auto& r : result.runs) {
      runs << r.model << "," << r.seed << "," << r.weight_decay << "," << r.final.train_ce << ","
           << r.final.test_ce << "," << r.final.train_err << "," << r.final.val_err << "," << r.final.test_err
           << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DropMax stochastic softmax: training, evaluation and self-checks"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string out_dir = "run";
  std::string data_dir;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write metrics and a checkpoint");
  train_cmd->add_option("--config", config_path, "Config file (key = value lines)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "Override the config seed");
  train_cmd->add_option("--model", model, "Override the model kind")
      ->check(CLI::IsMember({"dropmax", "softmax", "sampled", "random-dropmax", "det-attention", "det-dropmax",
                             "dropmax-qp"}));
  train_cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
  train_cmd->add_option("--data-dir", data_dir, "MNIST directory (overrides DROPMAX_DATA_DIR)");
  train_cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  std::string checkpoint;
  std::string predictor = "mean";
  int samples = 100;
  std::string split = "test";
  std::string dump;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config", config_path, "Config (defaults to config.txt next to the checkpoint)");
  eval_cmd->add_option("--predictor", predictor)->check(CLI::IsMember({"mean", "mc"}))->capture_default_str();
  eval_cmd->add_option("--samples", samples, "Monte-Carlo samples")->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval_cmd->add_option("--dump", dump, "Write per-instance probabilities and retain vectors (CSV)");
  eval_cmd->add_option("--data-dir", data_dir, "MNIST directory (overrides DROPMAX_DATA_DIR)");

  std::uint64_t check_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every head on a toy problem");
  grad_cmd->add_option("--model", model, "Head to check, or all")->capture_default_str();
  grad_cmd->add_option("--seed", check_seed)->capture_default_str();

  auto* oracle_cmd = app.add_subcommand("oracle", "Run the exact-enumeration checks");
  oracle_cmd->add_option("--seed", check_seed)->capture_default_str();

  std::string configs_dir;
  std::string compare_out;
  auto* compare_cmd = app.add_subcommand("compare", "Run every config over its seeds and decay grid");
  compare_cmd->add_option("--configs", configs_dir, "Directory of config files")->required()->check(CLI::ExistingDirectory);
  compare_cmd->add_option("--out", compare_out, "Directory for summary.md and runs.csv");
  compare_cmd->add_option("--data-dir", data_dir, "MNIST directory (overrides DROPMAX_DATA_DIR)");
  compare_cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(config_path, seed, model, data_dir, out_dir, quiet);
    if (*eval_cmd) return run_eval(checkpoint, config_path, predictor, samples, split, dump, data_dir);
    if (*grad_cmd) return run_gradcheck(model, check_seed);
    if (*oracle_cmd) return run_oracle(check_seed);
    if (*compare_cmd) return run_compare_cmd(configs_dir, compare_out, data_dir, quiet);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
