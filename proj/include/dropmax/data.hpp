#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dropmax/autodiff.hpp"
#include "dropmax/batch.hpp"

namespace dropmax {

// ---------------------------------------------------------------------------
// IDX files (the MNIST distribution format): big-endian u32 magic, then one
// big-endian u32 per dimension, then unsigned-byte payload.

enum class IdxKind { images, labels };

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

struct IdxFile {
  IdxKind kind = IdxKind::labels;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;

  std::size_t count() const { return dims.empty() ? 0 : dims[0]; }
};

/// Throws FormatError on a wrong or unexpected magic, LengthError on a short
/// payload.
IdxFile parse_idx(std::span<const std::uint8_t> raw, IdxKind expected);

/// Reads and parses `path`; a `.gz` suffix is decompressed transparently.
/// Throws IoError if the file cannot be read.
IdxFile load_idx(const std::filesystem::path& path, IdxKind expected);

std::vector<std::uint8_t> encode_idx(const IdxFile& file);
void write_idx(const std::filesystem::path& path, const IdxFile& file);

// ---------------------------------------------------------------------------

enum class SplitTag { train, val, test };

const char* to_string(SplitTag tag);

/// Feature rows plus integer labels in [0, num_classes).
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  SplitTag split = SplitTag::train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  Dataset subset(std::span<const std::size_t> indices, SplitTag tag) const;
  LabeledBatch batch(std::span<const std::size_t> indices) const;
  LabeledBatch all() const;
};

/// Builds a dataset from an image file (pixels scaled by 1/255) and a label
/// file. Throws ContractError if the counts differ.
Dataset dataset_from_idx(const IdxFile& images, const IdxFile& labels, SplitTag tag);

/// Loads `train-*` (tag train) or `t10k-*` (tag test) from an MNIST directory,
/// accepting plain or `.gz` files.
Dataset load_mnist(const std::filesystem::path& dir, SplitTag which);

struct SplitSpec {
  std::size_t train = 1000;
  std::size_t val = 5000;
  std::size_t test = 10000;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless train + val fits in `pool` and test fits in
  /// `test_pool`.
  void validate(std::size_t pool, std::size_t test_pool) const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded permutation of [0, pool): the first `val` entries go to
/// validation, the next `train` entries to training.
SplitIndices split_indices(std::size_t pool, const SplitSpec& spec);

/// (train, val) carved from the full training pool.
std::pair<Dataset, Dataset> make_split(const Dataset& full_train, const SplitSpec& spec);

/// Per-epoch shuffled index batches keyed on (seed, epoch). The final short
/// batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

std::vector<LabeledBatch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch);

// ---------------------------------------------------------------------------

/// Gaussian clusters with unit variance around means of norm `separation`
/// in random directions. `overlap` in [0, 1] pulls the mean of class
/// `partner` toward class `anchor` (1 puts them on top of each other).
struct BlobSpec {
  std::size_t num_classes = 6;
  std::size_t per_class = 100;
  std::size_t dim = 10;
  double overlap = 0.0;
  double separation = 6.0;
  int anchor = 0;
  int partner = 1;
  std::uint64_t seed = 0;
};

/// Means depend only on `spec.seed`; samples for each split come from their
/// own stream, so train, val and test share one geometry. Labels are
/// balanced and grouped by class.
Dataset synthetic_blobs(const BlobSpec& spec, SplitTag tag = SplitTag::train);

}  // namespace dropmax
