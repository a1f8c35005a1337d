#pragma once

// Training configuration. On disk it is a flat UTF-8 file of `key = value`
// lines; `#` starts a comment, blank lines are ignored, unknown keys are an
// error. Lists are comma separated.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dropmax/data.hpp"
#include "dropmax/model.hpp"
#include "dropmax/optim.hpp"

namespace dropmax {

enum class DatasetKind { mnist, blobs };

struct TrainConfig {
  ModelSpec model;

  DatasetKind dataset = DatasetKind::blobs;
  /// Empty means $DROPMAX_DATA_DIR.
  std::string data_dir;
  SplitSpec split;
  BlobSpec blobs;
  std::size_t blob_val_per_class = 50;
  std::size_t blob_test_per_class = 100;

  std::size_t batch_size = 50;
  std::size_t epochs = 400;
  /// Epochs without a validation improvement before stopping; 0 disables.
  std::size_t patience = 50;
  std::size_t eval_every = 1;
  /// Hard cap on optimizer steps; 0 means no cap.
  std::size_t max_steps = 0;

  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-4;
  double momentum = 0.9;
  std::vector<std::size_t> lr_milestones;
  double lr_decay = 0.1;
  double weight_decay = 0.0;
  /// Exclude theta from weight decay.
  bool exempt_theta = true;

  Predictor predictor = Predictor::mean;
  std::uint64_t seed = 0;
  /// Record real elapsed time in the metrics; off keeps outputs bit-identical.
  bool wall_clock = false;

  /// Grid searched by `compare`.
  std::vector<double> weight_decay_grid{0.0};
  std::vector<std::uint64_t> seeds{0};

  /// Throws ConfigError on any invalid combination.
  void validate() const;

  /// Canonical text form; parse_config(to_text()) reproduces the config.
  std::string to_text() const;

  /// FNV-1a of the canonical text, excluding `seeds` and `weight_decay_grid`.
  std::uint64_t digest() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& config);

/// Weight-decay values allowed for MNIST runs.
inline constexpr double kMnistDecayGrid[] = {0.0, 1e-5, 1e-4, 1e-3};

/// Epoch counts per training-set size (1K, 5K, 55K).
std::size_t reference_epochs(std::size_t train_size);

std::string to_string(DatasetKind kind);

}  // namespace dropmax
