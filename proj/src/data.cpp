#include "dropmax/data.hpp"

#include <fstream>
#include <iterator>
#include <numeric>

#include <zlib.h>

#include "dropmax/error.hpp"
#include "dropmax/rng.hpp"

namespace dropmax {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> raw, std::size_t offset) {
  return (std::uint32_t{raw[offset]} << 24) | (std::uint32_t{raw[offset + 1]} << 16) |
         (std::uint32_t{raw[offset + 2]} << 8) | std::uint32_t{raw[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_plain(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> read_gzip(const std::filesystem::path& path) {
  gzFile gz = gzopen(path.string().c_str(), "rb");
  if (gz == nullptr) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(gz, buf, sizeof(buf));
    if (n < 0) {
      gzclose(gz);
      throw IoError("gzip stream error in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(gz);
  return out;
}

}  // namespace

IdxFile parse_idx(std::span<const std::uint8_t> raw, IdxKind expected) {
  if (raw.size() < 4) throw LengthError("IDX header truncated");
  const std::uint32_t magic = read_be32(raw, 0);
  IdxKind kind;
  std::size_t rank;
  if (magic == kIdxImageMagic) {
    kind = IdxKind::images;
    rank = 3;
  } else if (magic == kIdxLabelMagic) {
    kind = IdxKind::labels;
    rank = 1;
  } else {
    throw FormatError("unknown IDX magic " + std::to_string(magic));
  }
  if (kind != expected) {
    throw FormatError(std::string("IDX magic ") + std::to_string(magic) + " is not a " +
                      (expected == IdxKind::images ? "image" : "label") + " file");
  }
  const std::size_t header = 4 + 4 * rank;
  if (raw.size() < header) throw LengthError("IDX header truncated");

  IdxFile file;
  file.kind = kind;
  std::size_t payload = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    file.dims.push_back(read_be32(raw, 4 + 4 * d));
    payload *= file.dims.back();
  }
  if (raw.size() < header + payload) {
    throw LengthError("IDX payload truncated: expected " + std::to_string(payload) + " bytes, got " +
                      std::to_string(raw.size() - header));
  }
  file.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header),
                    raw.begin() + static_cast<std::ptrdiff_t>(header + payload));
  return file;
}

IdxFile load_idx(const std::filesystem::path& path, IdxKind expected) {
  const bool gz = path.extension() == ".gz";
  const std::vector<std::uint8_t> raw = gz ? read_gzip(path) : read_plain(path);
  return parse_idx(raw, expected);
}

std::vector<std::uint8_t> encode_idx(const IdxFile& file) {
  std::vector<std::uint8_t> out;
  write_be32(out, file.kind == IdxKind::images ? kIdxImageMagic : kIdxLabelMagic);
  for (std::uint32_t d : file.dims) write_be32(out, d);
  out.insert(out.end(), file.bytes.begin(), file.bytes.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxFile& file) {
  const std::vector<std::uint8_t> raw = encode_idx(file);
  if (path.extension() == ".gz") {
    gzFile gz = gzopen(path.string().c_str(), "wb");
    if (gz == nullptr) throw IoError("cannot write " + path.string());
    const int n = gzwrite(gz, raw.data(), static_cast<unsigned>(raw.size()));
    gzclose(gz);
    if (n != static_cast<int>(raw.size())) throw IoError("short write to " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "?";
}

Dataset Dataset::subset(std::span<const std::size_t> indices, SplitTag tag) const {
  Dataset out;
  out.num_classes = num_classes;
  out.split = tag;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

LabeledBatch Dataset::batch(std::span<const std::size_t> indices) const {
  LabeledBatch b;
  b.num_classes = num_classes;
  b.x.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  b.targets.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    b.x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(indices[i]));
    b.targets.push_back(labels[indices[i]]);
  }
  return b;
}

LabeledBatch Dataset::all() const { return {features, labels, num_classes}; }

Dataset dataset_from_idx(const IdxFile& images, const IdxFile& labels, SplitTag tag) {
  if (images.kind != IdxKind::images || labels.kind != IdxKind::labels) {
    throw ContractError("dataset_from_idx: wrong file kinds");
  }
  if (images.count() != labels.count()) {
    throw ContractError("image count " + std::to_string(images.count()) + " != label count " +
                        std::to_string(labels.count()));
  }
  const std::size_t n = images.count();
  const std::size_t pixels = std::size_t{images.dims[1]} * images.dims[2];
  Dataset out;
  out.split = tag;
  out.num_classes = 10;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < n * pixels; ++i) out.features.data()[i] = images.bytes[i] / 255.0;
  out.labels.reserve(n);
  for (std::uint8_t b : labels.bytes) {
    if (b >= out.num_classes) throw FormatError("label " + std::to_string(b) + " out of range");
    out.labels.push_back(b);
  }
  return out;
}

Dataset load_mnist(const std::filesystem::path& dir, SplitTag which) {
  const std::string prefix = which == SplitTag::test ? "t10k" : "train";
  auto locate = [&](const std::string& stem) {
    for (const std::string& name : {stem, stem + ".gz"}) {
      const auto path = dir / name;
      if (std::filesystem::exists(path)) return path;
    }
    throw IoError("missing " + (dir / stem).string() + "[.gz]");
  };
  const IdxFile images = load_idx(locate(prefix + "-images-idx3-ubyte"), IdxKind::images);
  const IdxFile labels = load_idx(locate(prefix + "-labels-idx1-ubyte"), IdxKind::labels);
  return dataset_from_idx(images, labels, which);
}

void SplitSpec::validate(std::size_t pool, std::size_t test_pool) const {
  if (train == 0) throw ConfigError("train size must be positive");
  if (train + val > pool) {
    throw ConfigError("train + val = " + std::to_string(train + val) + " exceeds pool of " +
                      std::to_string(pool));
  }
  if (test > test_pool) {
    throw ConfigError("test size " + std::to_string(test) + " exceeds " + std::to_string(test_pool));
  }
}

SplitIndices split_indices(std::size_t pool, const SplitSpec& spec) {
  spec.validate(pool, spec.test);
  std::vector<std::size_t> perm(pool);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng::derive(spec.seed, Stream::split);
  rng.shuffle(std::span<std::size_t>(perm));
  SplitIndices out;
  out.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(spec.val));
  out.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(spec.val),
                   perm.begin() + static_cast<std::ptrdiff_t>(spec.val + spec.train));
  return out;
}

std::pair<Dataset, Dataset> make_split(const Dataset& full_train, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(full_train.size(), spec);
  return {full_train.subset(idx.train, SplitTag::train), full_train.subset(idx.val, SplitTag::val)};
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, Stream::shuffle, epoch);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<LabeledBatch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch) {
  std::vector<LabeledBatch> out;
  for (const auto& idx : batch_indices(data.size(), batch_size, seed, epoch)) {
    out.push_back(data.batch(idx));
  }
  return out;
}

Dataset synthetic_blobs(const BlobSpec& spec, SplitTag tag) {
  if (spec.num_classes < 2) throw ConfigError("synthetic_blobs needs K >= 2");
  if (spec.dim == 0) throw ConfigError("synthetic_blobs needs dim >= 1");
  if (spec.overlap < 0.0 || spec.overlap > 1.0) throw ConfigError("overlap must lie in [0, 1]");
  const auto k = static_cast<Eigen::Index>(spec.num_classes);
  const auto d = static_cast<Eigen::Index>(spec.dim);
  auto valid_class = [&](int c) { return c >= 0 && c < static_cast<int>(spec.num_classes); };
  if (!valid_class(spec.anchor) || !valid_class(spec.partner) || spec.anchor == spec.partner) {
    throw ConfigError("blob anchor and partner must be distinct classes");
  }

  Rng geometry = Rng::derive(spec.seed, Stream::synthetic, 0);
  Matrix means(k, d);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (Eigen::Index j = 0; j < d; ++j) means(c, j) = geometry.normal();
    means.row(c) *= spec.separation / means.row(c).norm();
  }
  means.row(spec.partner) =
      means.row(spec.anchor) + (1.0 - spec.overlap) * (means.row(spec.partner) - means.row(spec.anchor));

  Rng rng = Rng::derive(spec.seed, Stream::synthetic, 1 + static_cast<std::uint64_t>(tag));
  Dataset out;
  out.split = tag;
  out.num_classes = spec.num_classes;
  out.features.resize(k * static_cast<Eigen::Index>(spec.per_class), d);
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
      for (Eigen::Index j = 0; j < d; ++j) out.features(row, j) = means(c, j) + rng.normal();
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

}  // namespace dropmax
