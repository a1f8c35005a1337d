#include "dropmax/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "dropmax/error.hpp"

namespace dropmax {

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

nlohmann::json to_json(const MetricsRecord& r) {
  return {{"step", r.step},         {"epoch", r.epoch},       {"train_ce", r.train_ce},
          {"train_err", r.train_err}, {"val_err", r.val_err}, {"test_err", r.test_err},
          {"test_ce", r.test_ce},   {"wall_ms", r.wall_ms},   {"mean_retain", r.mean_retain}};
}

}  // namespace

std::string format_metrics(std::span<const MetricsRecord> records, MetricsFormat format) {
  if (format == MetricsFormat::json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) arr.push_back(to_json(r));
    return arr.dump(2) + "\n";
  }
  std::string out = "step,train_ce,train_err,val_err,test_err,wall_ms\n";
  for (const auto& r : records) {
    out += std::to_string(r.step) + "," + fmt("%.6f", r.train_ce) + "," + fmt("%.4f", r.train_err) +
           "," + fmt("%.4f", r.val_err) + "," + fmt("%.4f", r.test_err) + "," +
           fmt("%.0f", r.wall_ms) + "\n";
  }
  return out;
}

void export_metrics(std::span<const MetricsRecord> records, const std::filesystem::path& path,
                    MetricsFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics to " + path.string());
  out << format_metrics(records, format);
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<MetricsRecord> parse_metrics_json(const std::string& text) {
  std::vector<MetricsRecord> out;
  for (const auto& j : nlohmann::json::parse(text)) {
    MetricsRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.train_ce = j.at("train_ce").get<double>();
    r.train_err = j.at("train_err").get<double>();
    r.val_err = j.at("val_err").get<double>();
    r.test_err = j.at("test_err").get<double>();
    r.test_ce = j.at("test_ce").get<double>();
    r.wall_ms = j.at("wall_ms").get<double>();
    r.mean_retain = j.at("mean_retain").get<std::vector<double>>();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

DataBundle load_data(const TrainConfig& config) {
  DataBundle out;
  if (config.dataset == DatasetKind::blobs) {
    BlobSpec spec = config.blobs;
    spec.seed = config.seed;
    out.train = synthetic_blobs(spec, SplitTag::train);
    spec.per_class = config.blob_val_per_class;
    out.val = synthetic_blobs(spec, SplitTag::val);
    spec.per_class = config.blob_test_per_class;
    out.test = synthetic_blobs(spec, SplitTag::test);
    return out;
  }
  std::string dir = config.data_dir;
  if (dir.empty()) {
    const char* env = std::getenv("DROPMAX_DATA_DIR");
    if (env == nullptr || *env == '\0') {
      throw ConfigError("MNIST requested but neither data_dir nor DROPMAX_DATA_DIR is set");
    }
    dir = env;
  }
  const Dataset pool = load_mnist(dir, SplitTag::train);
  Dataset test = load_mnist(dir, SplitTag::test);
  SplitSpec split = config.split;
  split.seed = config.seed;
  split.validate(pool.size(), test.size());
  std::tie(out.train, out.val) = make_split(pool, split);
  if (split.test < test.size()) {
    std::vector<std::size_t> head(split.test);
    for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
    test = test.subset(head, SplitTag::test);
  }
  out.test = std::move(test);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(Classifier& model, const Dataset& data, Predictor predictor, int samples,
                    std::uint64_t seed) {
  if (data.num_classes != model.num_classes()) {
    throw ContractError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                        std::to_string(model.num_classes()));
  }
  constexpr std::size_t kChunk = 1000;
  const std::size_t n = data.size();
  const auto k = static_cast<Eigen::Index>(model.num_classes());
  EvalResult out;
  out.probs.resize(static_cast<Eigen::Index>(n), k);
  bool has_retain = false;
  for (std::size_t start = 0, chunk = 0; start < n; start += kChunk, ++chunk) {
    const auto rows = static_cast<Eigen::Index>(std::min(kChunk, n - start));
    const auto first = static_cast<Eigen::Index>(start);
    Rng noise = Rng::derive(seed, Stream::evaluation, chunk);
    Prediction p = model.predict(data.features.middleRows(first, rows), predictor, samples, noise);
    out.probs.middleRows(first, rows) = p.probs;
    if (p.retain.size() > 0) {
      if (!has_retain) out.retain.resize(static_cast<Eigen::Index>(n), k);
      has_retain = true;
      out.retain.middleRows(first, rows) = p.retain;
    }
  }
  out.predictions = argmax_rows(out.probs);
  std::size_t wrong = 0;
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = data.labels[i];
    if (out.predictions[i] != t) ++wrong;
    ce -= std::log(std::max(out.probs(static_cast<Eigen::Index>(i), t), 1e-300));
  }
  out.error_pct = n == 0 ? 0.0 : 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
  out.mean_ce = n == 0 ? 0.0 : ce / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

MetricsRecord measure(const TrainConfig& config, Classifier& model, const DataBundle& data,
                      std::size_t step, std::size_t epoch) {
  const int samples = model.spec().dropmax.test_samples;
  MetricsRecord r;
  r.step = step;
  r.epoch = epoch;
  const EvalResult train_eval = evaluate(model, data.train, config.predictor, samples, config.seed);
  r.train_ce = train_eval.mean_ce;
  r.train_err = train_eval.error_pct;
  r.val_err = evaluate(model, data.val, config.predictor, samples, config.seed + 1).error_pct;
  const EvalResult test_eval = evaluate(model, data.test, config.predictor, samples, config.seed + 2);
  r.test_err = test_eval.error_pct;
  r.test_ce = test_eval.mean_ce;
  if (test_eval.retain.size() > 0) {
    const Matrix mean = test_eval.retain.colwise().mean();
    r.mean_retain.assign(mean.data(), mean.data() + mean.size());
  }
  return r;
}

std::vector<Matrix> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, Classifier& model, const DataBundle& data,
                  std::ostream* log) {
  config.validate();
  if (data.train.size() == 0) throw ConfigError("empty training set");
  const std::vector<Parameter*> params = model.parameters();
  auto optimizer = make_optimizer(config.optimizer, config.momentum);
  std::set<ParamGroup> exempt;
  if (config.exempt_theta) exempt.insert(ParamGroup::theta);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    if (!config.wall_clock) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best = snapshot(params);
  std::size_t step = 0;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    const double lr = scheduled_lr(config.lr, config.lr_milestones, config.lr_decay, epoch);
    for (const auto& idx : batch_indices(data.train.size(), config.batch_size, config.seed, epoch)) {
      const LabeledBatch batch = data.train.batch(idx);
      model.zero_grad();
      Tape tape;
      Rng noise = Rng::derive(config.seed, Stream::noise, step);
      Tensor loss = scale(model.loss(tape, batch, noise), 1.0 / static_cast<double>(batch.size()));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss " + std::to_string(value) + " at step " +
                              std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
      }
      tape.backward(loss);
      apply_weight_decay(params, config.weight_decay, exempt);
      optimizer->step(params, lr);
      ++step;
      if (config.max_steps != 0 && step >= config.max_steps) {
        stop = true;
        break;
      }
    }

    const bool last = stop || epoch + 1 == config.epochs;
    if ((epoch + 1) % config.eval_every != 0 && !last) continue;
    MetricsRecord record = measure(config, model, data, step, epoch + 1);
    record.wall_ms = elapsed_ms();
    if (log != nullptr) {
      *log << to_string(config.model.kind) << " seed " << config.seed << " epoch " << epoch + 1
           << " step " << step << " train_ce " << fmt("%.4f", record.train_ce) << " train_err "
           << fmt("%.2f", record.train_err) << " val_err " << fmt("%.2f", record.val_err)
           << " test_err " << fmt("%.2f", record.test_err) << "\n";
    }
    result.records.push_back(record);
    if (record.val_err < best_val) {
      best_val = record.val_err;
      best = snapshot(params);
      result.best_epoch = epoch + 1;
      result.final = record;
    } else if (config.patience != 0 && epoch + 1 - result.best_epoch >= config.patience) {
      result.early_stopped = true;
      stop = true;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  result.steps = step;
  return result;
}

TrainResult train(const TrainConfig& config, const DataBundle& data, std::ostream* log) {
  Classifier model(config.model, data.train.dim(), data.train.num_classes, config.seed);
  return train(config, model, data, log);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'M', 'A', 'X', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) throw LengthError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Classifier& model, std::uint64_t digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, digest);
  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put<double>(out, p->value.data()[i]);
  }
  if (!out) throw IoError("short write to " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, Classifier& model, std::uint64_t digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("not a checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto stored_digest = get<std::uint64_t>(in);
  if (stored_digest != digest) throw ContractError("checkpoint was written for a different config");

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;
  const auto count = get<std::uint32_t>(in);
  if (count != by_name.size()) {
    throw ContractError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                        std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw LengthError("checkpoint truncated");
    const auto rank = get<std::uint32_t>(in);
    if (rank != 2) throw FormatError("parameter " + name + " has rank " + std::to_string(rank));
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("unexpected parameter " + name);
    Parameter& p = *it->second;
    if (rows != static_cast<std::uint64_t>(p.value.rows()) ||
        cols != static_cast<std::uint64_t>(p.value.cols())) {
      throw ContractError("shape mismatch for " + name + " (class count or architecture differs)");
    }
    for (Eigen::Index j = 0; j < p.value.size(); ++j) p.value.data()[j] = get<double>(in);
  }
}

void export_predictions(const std::filesystem::path& path, const Dataset& data, const EvalResult& eval) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions to " + path.string());
  const Eigen::Index k = eval.probs.cols();
  out << "index,label,prediction";
  for (Eigen::Index c = 0; c < k; ++c) out << ",p_" << c;
  if (eval.retain.size() > 0) {
    for (Eigen::Index c = 0; c < k; ++c) out << ",rho_" << c;
  }
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out << i << "," << data.labels[i] << "," << eval.predictions[i];
    for (Eigen::Index c = 0; c < k; ++c) out << "," << fmt("%.9g", eval.probs(row, c));
    if (eval.retain.size() > 0) {
      for (Eigen::Index c = 0; c < k; ++c) out << "," << fmt("%.9g", eval.retain(row, c));
    }
    out << "\n";
  }
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Grid comparison

CompareResult run_compare(std::span<const TrainConfig> configs, std::ostream* log) {
  CompareResult result;
  for (const TrainConfig& base : configs) {
    base.validate();
    ModelSummary summary;
    summary.model = to_string(base.model.kind);
    for (std::uint64_t seed : base.seeds) {
      TrainConfig seeded = base;
      seeded.seed = seed;
      const DataBundle data = load_data(seeded);
      std::optional<GridRun> best;
      for (double decay : base.weight_decay_grid) {
        TrainConfig run = seeded;
        run.weight_decay = decay;
        const TrainResult trained = train(run, data, log);
        GridRun entry{summary.model, seed, decay, trained.final};
        result.runs.push_back(entry);
        if (!best || entry.final.val_err < best->final.val_err) best = entry;
      }
      if (log != nullptr) {
        *log << summary.model << " seed " << seed << ": selected weight_decay "
             << fmt("%g", best->weight_decay) << " val_err " << fmt("%.2f", best->final.val_err)
             << " test_err " << fmt("%.2f", best->final.test_err) << "\n";
      }
      summary.selected.push_back(*best);
    }
    const auto n = static_cast<double>(summary.selected.size());
    double sum = 0.0;
    double gap = 0.0;
    for (const auto& r : summary.selected) {
      sum += r.final.test_err;
      gap += r.final.test_ce - r.final.train_ce;
    }
    summary.mean_test_err = sum / n;
    summary.mean_ce_gap = gap / n;
    if (summary.selected.size() > 1) {
      double ss = 0.0;
      for (const auto& r : summary.selected) ss += std::pow(r.final.test_err - summary.mean_test_err, 2);
      summary.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    result.summaries.push_back(std::move(summary));
  }
  return result;
}

std::string format_summary(const CompareResult& result) {
  std::ostringstream out;
  out << "| model | test error (%) | 95% CI | seeds | selected weight decay | test-train CE gap |\n";
  out << "|---|---|---|---|---|---|\n";
  for (const auto& s : result.summaries) {
    std::string decays;
    for (std::size_t i = 0; i < s.selected.size(); ++i) {
      if (i > 0) decays += ",";
      decays += fmt("%g", s.selected[i].weight_decay);
    }
    out << "| " << s.model << " | " << fmt("%.2f", s.mean_test_err) << " | " << fmt("%.2f", s.ci95)
        << " | " << s.selected.size() << " | " << decays << " | " << fmt("%.4f", s.mean_ce_gap) << " |\n";
  }
  return out.str();
}

}  // namespace dropmax
