#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "dropmax/config.hpp"
#include "dropmax/error.hpp"
#include "dropmax/harness.hpp"
#include "dropmax/optim.hpp"
#include "support.hpp"

using namespace dropmax;
using dropmax::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dropmax_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig blob_config(ModelKind kind) {
  TrainConfig c;
  c.model.kind = kind;
  c.model.hidden = {16};
  c.dataset = DatasetKind::blobs;
  c.blobs.per_class = 50;
  c.blob_val_per_class = 20;
  c.blob_test_per_class = 20;
  c.lr = 1e-3;
  c.epochs = 6;
  c.patience = 0;
  c.eval_every = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  Parameter p("w", ParamGroup::psi, Matrix::Zero(1, 4));
  p.grad.resize(1, 4);
  p.grad << 3.0, -0.01, 250.0, -7.0;
  std::vector<Parameter*> params{&p};
  AdamState state;
  adam_step(params, state, 0.01);
  for (int k = 0; k < 4; ++k) {
    const double g = p.grad(0, k);
    EXPECT_NEAR(p.value(0, k), -0.01 * g / (std::abs(g) + 1e-8), 1e-9);
  }
}

TEST(Adam, ZeroGradientLeavesParametersAndRunsAreReproducible) {
  Parameter p("w", ParamGroup::psi, Matrix::Constant(2, 2, 0.3));
  p.zero_grad();
  std::vector<Parameter*> params{&p};
  AdamState state;
  adam_step(params, state, 0.1);
  EXPECT_EQ(p.value, Matrix::Constant(2, 2, 0.3));

  auto run = [] {
    Parameter q("w", ParamGroup::psi, Matrix::Constant(1, 3, 1.0));
    std::vector<Parameter*> ps{&q};
    AdamState s;
    for (int i = 0; i < 5; ++i) {
      q.grad = q.value * 2.0;
      adam_step(ps, s, 0.05);
    }
    return std::make_pair(q.value, s.second[0]);
  };
  EXPECT_EQ(run(), run());
}

TEST(SgdMomentum, AccumulatesVelocity) {
  Parameter p("w", ParamGroup::psi, Matrix::Zero(1, 1));
  p.grad = Matrix::Constant(1, 1, 1.0);
  std::vector<Parameter*> params{&p};
  MomentumState state;
  sgd_momentum_step(params, state, 0.1, 0.9);
  sgd_momentum_step(params, state, 0.1, 0.9);
  EXPECT_NEAR(p.value(0, 0), -0.1 - 0.19, 1e-15);
  EXPECT_EQ(parse_optimizer_kind("sgd-momentum"), OptimizerKind::sgd_momentum);
}

TEST(WeightDecay, ExemptsThetaOnly) {
  Parameter psi("psi", ParamGroup::psi, Matrix::Constant(1, 2, 2.0));
  Parameter theta("theta", ParamGroup::theta, Matrix::Constant(1, 2, 2.0));
  Parameter phi("phi", ParamGroup::phi, Matrix::Constant(1, 2, 2.0));
  for (Parameter* p : {&psi, &theta, &phi}) p->grad = Matrix::Constant(1, 2, 0.5);
  std::vector<Parameter*> params{&psi, &theta, &phi};
  apply_weight_decay(params, 0.0, {ParamGroup::theta});
  EXPECT_EQ(psi.grad, Matrix::Constant(1, 2, 0.5));
  apply_weight_decay(params, 1e-3, {ParamGroup::theta});
  EXPECT_EQ(theta.grad, Matrix::Constant(1, 2, 0.5));
  EXPECT_DOUBLE_EQ(psi.grad(0, 0), 0.5 + 2e-3);
  EXPECT_DOUBLE_EQ(phi.grad(0, 1), 0.5 + 2e-3);
}

TEST(Schedule, StepDecayAtMilestones) {
  const std::vector<std::size_t> milestones{10, 20};
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, milestones, 0.1, 9), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, milestones, 0.1, 10), 0.1);
  EXPECT_NEAR(scheduled_lr(1.0, milestones, 0.1, 25), 0.01, 1e-15);
}

TEST(Config, TextRoundTripAndDigest) {
  TrainConfig c = blob_config(ModelKind::sampled);
  c.model.fraction = 0.2;
  c.model.dropmax.entropy_sign = EntropySign::flipped;
  c.lr_milestones = {5, 9};
  c.seeds = {1, 2, 3};
  const TrainConfig back = parse_config(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.digest(), c.digest());
  TrainConfig other = c;
  other.seeds = {7};
  EXPECT_EQ(other.digest(), c.digest());
  other.lr = 2e-3;
  EXPECT_NE(other.digest(), c.digest());
}

TEST(Config, ParsingErrors) {
  EXPECT_THROW(parse_config("colour = blue\n"), ConfigError);
  EXPECT_THROW(parse_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("# comment\n\nlr = 0.5  # trailing\n"));
  EXPECT_THROW(parse_config("dataset = mnist\nweight_decay = 0.01\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("dataset = mnist\nweight_decay = 1e-4\n"));
  EXPECT_THROW(parse_config("lr = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("epochs = 0\n"), ConfigError);
}

TEST(Config, ScheduleEpochs) {
  EXPECT_EQ(reference_epochs(1000), 2000u);
  EXPECT_EQ(reference_epochs(5000), 500u);
  EXPECT_EQ(reference_epochs(55000), 100u);
}

TEST(Metrics, CsvShapeAndJsonRoundTrip) {
  EXPECT_EQ(format_metrics({}, MetricsFormat::csv), "step,train_ce,train_err,val_err,test_err,wall_ms\n");
  std::vector<MetricsRecord> records(3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].step = 10 * i;
    records[i].train_ce = 0.123456789 * static_cast<double>(i);
    records[i].test_err = 12.5;
    records[i].mean_retain = {0.25, 0.5};
  }
  const std::string csv = format_metrics(records, MetricsFormat::csv);
  std::istringstream lines(csv);
  std::string line;
  while (std::getline(lines, line)) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
  EXPECT_EQ(csv.back(), '\n');

  const auto back = parse_metrics_json(format_metrics(records, MetricsFormat::json));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].train_ce, records[2].train_ce);
  EXPECT_EQ(back[1].mean_retain, records[1].mean_retain);
  EXPECT_THROW(export_metrics(records, "/nonexistent-dir/m.csv", MetricsFormat::csv), IoError);
}

TEST(Evaluate, PerfectAndUniformPredictors) {
  // Features are one-hot labels, so an identity softmax head is perfect.
  Dataset d;
  d.num_classes = 10;
  d.features = Matrix::Zero(10000, 10);
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    d.labels.push_back(i % 10);
    d.features(i, i % 10) = 1.0;
  }
  ModelSpec spec;
  spec.kind = ModelKind::softmax;
  Classifier model(spec, 10, 10, 0);
  model.head().psi.weight.value = Matrix::Identity(10, 10) * 5.0;
  EXPECT_EQ(evaluate(model, d, Predictor::mean, 1, 0).error_pct, 0.0);

  // Random features and a random head act as an uninformed guesser.
  d.features = random_matrix(rng, 10000, 10, -1, 1);
  model.head().psi.weight.value = random_matrix(rng, 10, 10, -3, 3);
  const EvalResult r = evaluate(model, d, Predictor::mean, 1, 0);
  EXPECT_NEAR(r.error_pct, 90.0, 3.0);
  EXPECT_EQ(r.predictions, evaluate(model, d, Predictor::mean, 1, 0).predictions);

  d.num_classes = 5;
  EXPECT_THROW(evaluate(model, d, Predictor::mean, 1, 0), ContractError);
}

TEST(Train, LinearSoftmaxSeparatesWellSpacedBlobs) {
  TrainConfig c = blob_config(ModelKind::softmax);
  c.model.hidden.clear();
  c.blobs.separation = 12.0;
  c.blobs.per_class = 100;
  c.lr = 0.05;
  c.epochs = 100;
  c.max_steps = 200;
  c.eval_every = 100;
  const TrainResult r = train(c, load_data(c));
  EXPECT_EQ(r.steps, 200u);
  EXPECT_LT(r.final.train_err, 1.0);
}

TEST(Train, RepeatableAndCheckpointed) {
  const fs::path dir = temp_dir("ckpt");
  for (ModelKind kind : {ModelKind::dropmax, ModelKind::det_dropmax, ModelKind::sampled}) {
    const TrainConfig c = blob_config(kind);
    const DataBundle data = load_data(c);
    Classifier a(c.model, data.train.dim(), data.train.num_classes, c.seed);
    Classifier b(c.model, data.train.dim(), data.train.num_classes, c.seed);
    const TrainResult ra = train(c, a, data);
    const TrainResult rb = train(c, b, data);
    EXPECT_EQ(format_metrics(ra.records, MetricsFormat::csv), format_metrics(rb.records, MetricsFormat::csv));
    EXPECT_EQ(ra.records.size(), 3u);

    save_checkpoint(dir / "m.bin", a, c.digest());
    Classifier fresh(c.model, data.train.dim(), data.train.num_classes, c.seed + 1);
    load_checkpoint(dir / "m.bin", fresh, c.digest());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      EXPECT_EQ(a.parameters()[i]->value, fresh.parameters()[i]->value);
    }
    EXPECT_EQ(evaluate(fresh, data.test, Predictor::mean, 1, 0).error_pct, ra.final.test_err);
    EXPECT_THROW(load_checkpoint(dir / "m.bin", fresh, c.digest() + 1), ContractError);
    Classifier wider(c.model, data.train.dim(), 7, 0);
    EXPECT_THROW(load_checkpoint(dir / "m.bin", wider, c.digest()), ContractError);
  }
  std::ofstream(dir / "junk.bin") << "not a checkpoint";
  Classifier m(ModelSpec{}, 3, 2, 0);
  EXPECT_THROW(load_checkpoint(dir / "junk.bin", m, 0), FormatError);
  fs::remove_all(dir);
}

TEST(Train, EarlyStoppingRestoresBestParameters) {
  TrainConfig c = blob_config(ModelKind::softmax);
  c.epochs = 200;
  c.patience = 3;
  c.eval_every = 1;
  c.lr = 0.05;
  const DataBundle data = load_data(c);
  Classifier model(c.model, data.train.dim(), data.train.num_classes, c.seed);
  const TrainResult r = train(c, model, data);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_LT(r.records.size(), 200u);
  EXPECT_EQ(evaluate(model, data.val, Predictor::mean, 1, c.seed + 1).error_pct, r.final.val_err);
}

TEST(Train, NonFiniteLossIsDivergence) {
  TrainConfig c = blob_config(ModelKind::softmax);
  DataBundle data = load_data(c);
  data.train.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train(c, data), DivergenceError);
}

TEST(Compare, SelectsDecayOnValidationAndSummarizes) {
  TrainConfig c = blob_config(ModelKind::softmax);
  c.weight_decay_grid = {0.0, 1e-3};
  c.seeds = {0, 1};
  const std::vector<TrainConfig> configs{c};
  const CompareResult r = run_compare(configs);
  EXPECT_EQ(r.runs.size(), 4u);
  ASSERT_EQ(r.summaries.size(), 1u);
  const ModelSummary& s = r.summaries[0];
  EXPECT_EQ(s.selected.size(), 2u);
  for (const GridRun& sel : s.selected) {
    for (const GridRun& run : r.runs) {
      if (run.seed == sel.seed) EXPECT_LE(sel.final.val_err, run.final.val_err);
    }
  }
  const std::string table = format_summary(r);
  EXPECT_NE(table.find("| softmax |"), std::string::npos);
}

TEST(Export, PredictionDumpHasRetainColumns) {
  const fs::path dir = temp_dir("dump");
  TrainConfig c = blob_config(ModelKind::dropmax);
  c.epochs = 1;
  const DataBundle data = load_data(c);
  Classifier model(c.model, data.train.dim(), data.train.num_classes, 0);
  const EvalResult r = evaluate(model, data.test, Predictor::mc, 5, 0);
  export_predictions(dir / "p.csv", data.test, r);
  const std::string text = slurp(dir / "p.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "index,label,prediction,p_0,p_1,p_2,p_3,p_4,p_5,rho_0,rho_1,rho_2,rho_3,rho_4,rho_5");
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), data.test.size() + 1);
  fs::remove_all(dir);
}
