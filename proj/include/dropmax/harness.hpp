#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dropmax/config.hpp"
#include "dropmax/data.hpp"
#include "dropmax/model.hpp"

namespace dropmax {

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_ce = 0.0;
  double train_err = 0.0;
  double val_err = 0.0;
  double test_err = 0.0;
  double test_ce = 0.0;
  double wall_ms = 0.0;
  /// Mean retain probability (or attention weight) per class over the test
  /// set. Empty for heads without one.
  std::vector<double> mean_retain;
};

enum class MetricsFormat { csv, json };

/// CSV: header `step,train_ce,train_err,val_err,test_err,wall_ms` then one
/// row per record. JSON: an array of record objects. Both newline-terminated.
std::string format_metrics(std::span<const MetricsRecord> records, MetricsFormat format);
void export_metrics(std::span<const MetricsRecord> records, const std::filesystem::path& path,
                    MetricsFormat format);
/// Inverse of the JSON export.
std::vector<MetricsRecord> parse_metrics_json(const std::string& text);

struct DataBundle {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// MNIST from `config.data_dir` (or $DROPMAX_DATA_DIR), or synthetic blobs.
DataBundle load_data(const TrainConfig& config);

struct EvalResult {
  double error_pct = 0.0;
  /// Mean -log p(y_t | x) under the predictor.
  double mean_ce = 0.0;
  std::vector<int> predictions;
  Matrix probs;
  Matrix retain;
};

/// Error is 100 * misclassified / N with lowest-index tie-break. Rows are
/// processed in chunks, each with its own noise stream derived from `seed`.
/// Throws ContractError if the class counts differ.
EvalResult evaluate(Classifier& model, const Dataset& data, Predictor predictor, int samples,
                    std::uint64_t seed);

struct TrainResult {
  std::vector<MetricsRecord> records;
  /// Metrics of the parameters finally kept (best validation error).
  MetricsRecord final;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  bool early_stopped = false;
};

/// Runs the configured head on the configured data. The model is trained in
/// place and left at its best-validation parameters. Throws DivergenceError
/// on a non-finite loss. `log` receives one progress line per evaluation.
TrainResult train(const TrainConfig& config, Classifier& model, const DataBundle& data,
                  std::ostream* log = nullptr);

/// Builds the model from the config, then trains it.
TrainResult train(const TrainConfig& config, const DataBundle& data, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: "DMAXCKPT" magic, u32 version, u64 config digest, u32 count,
// then per parameter: u32 name length, name bytes, u32 rank, u64 extents,
// raw little-endian f64 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Classifier& model, std::uint64_t digest);

/// Loads values into `model`. Throws FormatError on a bad header, ContractError
/// on a digest, name or shape mismatch.
void load_checkpoint(const std::filesystem::path& path, Classifier& model, std::uint64_t digest);

/// Writes per-instance label, prediction, probabilities and retain vectors.
void export_predictions(const std::filesystem::path& path, const Dataset& data, const EvalResult& eval);

// ---------------------------------------------------------------------------
// Grid comparison

struct GridRun {
  std::string model;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  MetricsRecord final;
};

struct ModelSummary {
  std::string model;
  std::vector<GridRun> selected;  ///< best-validation run per seed
  double mean_test_err = 0.0;
  /// 1.96 * sample standard deviation / sqrt(n).
  double ci95 = 0.0;
  /// Mean over seeds of (test CE - train CE).
  double mean_ce_gap = 0.0;
};

struct CompareResult {
  std::vector<GridRun> runs;
  std::vector<ModelSummary> summaries;
};

/// For every config and seed, trains each weight decay of the grid, keeps the
/// one with the lowest validation error and summarizes test error over seeds.
CompareResult run_compare(std::span<const TrainConfig> configs, std::ostream* log = nullptr);

/// Markdown table of the summaries.
std::string format_summary(const CompareResult& result);

}  // namespace dropmax
