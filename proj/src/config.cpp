#include "dropmax/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dropmax/error.hpp"

namespace dropmax {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ",";
    out += f(items[i]);
  }
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model", [](auto& c, auto&, auto& v) { c.model.kind = parse_model_kind(v); }},
      {"hidden",
       [](auto& c, auto& k, auto& v) {
         c.model.hidden.clear();
         for (const auto& item : split_list(v)) c.model.hidden.push_back(to_u64(k, item));
       }},
      {"activation",
       [](auto& c, auto&, auto& v) {
         if (v == "relu") c.model.activation = Activation::relu;
         else if (v == "tanh") c.model.activation = Activation::tanh;
         else throw ConfigError("activation must be relu or tanh");
       }},
      {"epsilon", [](auto& c, auto& k, auto& v) { c.model.dropmax.epsilon = to_double(k, v); }},
      {"tau", [](auto& c, auto& k, auto& v) { c.model.dropmax.tau = to_double(k, v); }},
      {"train_samples",
       [](auto& c, auto& k, auto& v) { c.model.dropmax.train_samples = static_cast<int>(to_u64(k, v)); }},
      {"test_samples",
       [](auto& c, auto& k, auto& v) { c.model.dropmax.test_samples = static_cast<int>(to_u64(k, v)); }},
      {"entropy_sign",
       [](auto& c, auto&, auto& v) {
         if (v == "literal") c.model.dropmax.entropy_sign = EntropySign::literal;
         else if (v == "flipped") c.model.dropmax.entropy_sign = EntropySign::flipped;
         else throw ConfigError("entropy_sign must be literal or flipped");
       }},
      {"gamma", [](auto& c, auto& k, auto& v) { c.model.dropmax.gamma = to_double(k, v); }},
      {"retain", [](auto& c, auto& k, auto& v) { c.model.retain = to_double(k, v); }},
      {"fraction", [](auto& c, auto& k, auto& v) { c.model.fraction = to_double(k, v); }},
      {"dataset",
       [](auto& c, auto&, auto& v) {
         if (v == "mnist") c.dataset = DatasetKind::mnist;
         else if (v == "blobs") c.dataset = DatasetKind::blobs;
         else throw ConfigError("dataset must be mnist or blobs");
       }},
      {"data_dir", [](auto& c, auto&, auto& v) { c.data_dir = v; }},
      {"train_size", [](auto& c, auto& k, auto& v) { c.split.train = to_u64(k, v); }},
      {"val_size", [](auto& c, auto& k, auto& v) { c.split.val = to_u64(k, v); }},
      {"test_size", [](auto& c, auto& k, auto& v) { c.split.test = to_u64(k, v); }},
      {"blob_classes", [](auto& c, auto& k, auto& v) { c.blobs.num_classes = to_u64(k, v); }},
      {"blob_per_class", [](auto& c, auto& k, auto& v) { c.blobs.per_class = to_u64(k, v); }},
      {"blob_val_per_class", [](auto& c, auto& k, auto& v) { c.blob_val_per_class = to_u64(k, v); }},
      {"blob_test_per_class", [](auto& c, auto& k, auto& v) { c.blob_test_per_class = to_u64(k, v); }},
      {"blob_dim", [](auto& c, auto& k, auto& v) { c.blobs.dim = to_u64(k, v); }},
      {"blob_overlap", [](auto& c, auto& k, auto& v) { c.blobs.overlap = to_double(k, v); }},
      {"blob_separation", [](auto& c, auto& k, auto& v) { c.blobs.separation = to_double(k, v); }},
      {"blob_anchor", [](auto& c, auto& k, auto& v) { c.blobs.anchor = static_cast<int>(to_u64(k, v)); }},
      {"blob_partner", [](auto& c, auto& k, auto& v) { c.blobs.partner = static_cast<int>(to_u64(k, v)); }},
      {"batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = to_u64(k, v); }},
      {"epochs", [](auto& c, auto& k, auto& v) { c.epochs = to_u64(k, v); }},
      {"patience", [](auto& c, auto& k, auto& v) { c.patience = to_u64(k, v); }},
      {"eval_every", [](auto& c, auto& k, auto& v) { c.eval_every = to_u64(k, v); }},
      {"max_steps", [](auto& c, auto& k, auto& v) { c.max_steps = to_u64(k, v); }},
      {"optimizer", [](auto& c, auto&, auto& v) { c.optimizer = parse_optimizer_kind(v); }},
      {"lr", [](auto& c, auto& k, auto& v) { c.lr = to_double(k, v); }},
      {"momentum", [](auto& c, auto& k, auto& v) { c.momentum = to_double(k, v); }},
      {"lr_milestones",
       [](auto& c, auto& k, auto& v) {
         c.lr_milestones.clear();
         for (const auto& item : split_list(v)) c.lr_milestones.push_back(to_u64(k, item));
       }},
      {"lr_decay", [](auto& c, auto& k, auto& v) { c.lr_decay = to_double(k, v); }},
      {"weight_decay", [](auto& c, auto& k, auto& v) { c.weight_decay = to_double(k, v); }},
      {"exempt_theta", [](auto& c, auto& k, auto& v) { c.exempt_theta = to_bool(k, v); }},
      {"predictor",
       [](auto& c, auto&, auto& v) {
         if (v == "mean") c.predictor = Predictor::mean;
         else if (v == "mc") c.predictor = Predictor::mc;
         else throw ConfigError("predictor must be mean or mc");
       }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = to_u64(k, v); }},
      {"wall_clock", [](auto& c, auto& k, auto& v) { c.wall_clock = to_bool(k, v); }},
      {"weight_decay_grid",
       [](auto& c, auto& k, auto& v) {
         c.weight_decay_grid.clear();
         for (const auto& item : split_list(v)) c.weight_decay_grid.push_back(to_double(k, item));
       }},
      {"seeds",
       [](auto& c, auto& k, auto& v) {
         c.seeds.clear();
         for (const auto& item : split_list(v)) c.seeds.push_back(to_u64(k, item));
       }},
  };
  return table;
}

bool on_decay_grid(double v) {
  return std::any_of(std::begin(kMnistDecayGrid), std::end(kMnistDecayGrid),
                     [v](double g) { return std::abs(v - g) <= 1e-15; });
}

std::string canonical_text(const TrainConfig& c, bool with_grid) {
  std::ostringstream out;
  auto line = [&out](const char* key, const std::string& value) { out << key << " = " << value << "\n"; };
  const auto& d = c.model.dropmax;
  line("model", to_string(c.model.kind));
  line("hidden", join(c.model.hidden, [](std::size_t w) { return std::to_string(w); }));
  line("activation", c.model.activation == Activation::relu ? "relu" : "tanh");
  line("epsilon", fmt_double(d.epsilon));
  line("tau", fmt_double(d.tau));
  line("train_samples", std::to_string(d.train_samples));
  line("test_samples", std::to_string(d.test_samples));
  line("entropy_sign", d.entropy_sign == EntropySign::literal ? "literal" : "flipped");
  line("gamma", fmt_double(d.gamma));
  line("retain", fmt_double(c.model.retain));
  line("fraction", fmt_double(c.model.fraction));
  line("dataset", to_string(c.dataset));
  line("data_dir", c.data_dir);
  line("train_size", std::to_string(c.split.train));
  line("val_size", std::to_string(c.split.val));
  line("test_size", std::to_string(c.split.test));
  line("blob_classes", std::to_string(c.blobs.num_classes));
  line("blob_per_class", std::to_string(c.blobs.per_class));
  line("blob_val_per_class", std::to_string(c.blob_val_per_class));
  line("blob_test_per_class", std::to_string(c.blob_test_per_class));
  line("blob_dim", std::to_string(c.blobs.dim));
  line("blob_overlap", fmt_double(c.blobs.overlap));
  line("blob_separation", fmt_double(c.blobs.separation));
  line("blob_anchor", std::to_string(c.blobs.anchor));
  line("blob_partner", std::to_string(c.blobs.partner));
  line("batch_size", std::to_string(c.batch_size));
  line("epochs", std::to_string(c.epochs));
  line("patience", std::to_string(c.patience));
  line("eval_every", std::to_string(c.eval_every));
  line("max_steps", std::to_string(c.max_steps));
  line("optimizer", to_string(c.optimizer));
  line("lr", fmt_double(c.lr));
  line("momentum", fmt_double(c.momentum));
  line("lr_milestones", join(c.lr_milestones, [](std::size_t m) { return std::to_string(m); }));
  line("lr_decay", fmt_double(c.lr_decay));
  line("weight_decay", fmt_double(c.weight_decay));
  line("exempt_theta", c.exempt_theta ? "true" : "false");
  line("predictor", c.predictor == Predictor::mean ? "mean" : "mc");
  line("seed", std::to_string(c.seed));
  line("wall_clock", c.wall_clock ? "true" : "false");
  if (with_grid) {
    line("weight_decay_grid", join(c.weight_decay_grid, fmt_double));
    line("seeds", join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }));
  }
  return out.str();
}

}  // namespace

std::string to_string(DatasetKind kind) { return kind == DatasetKind::mnist ? "mnist" : "blobs"; }

std::size_t reference_epochs(std::size_t train_size) {
  if (train_size <= 1000) return 2000;
  if (train_size <= 5000) return 500;
  return 100;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be > 0");
  if (weight_decay_grid.empty()) throw ConfigError("weight_decay_grid must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (dataset == DatasetKind::mnist) {
    if (!on_decay_grid(weight_decay)) {
      throw ConfigError("MNIST weight_decay must be one of 0, 1e-5, 1e-4, 1e-3");
    }
    for (double g : weight_decay_grid) {
      if (!on_decay_grid(g)) throw ConfigError("MNIST weight_decay_grid entries must be 0, 1e-5, 1e-4 or 1e-3");
    }
    if (split.val == 0) throw ConfigError("val_size must be positive");
  } else {
    if (blob_val_per_class == 0) throw ConfigError("blob_val_per_class must be positive");
    if (blobs.num_classes < 2) throw ConfigError("blob_classes must be >= 2");
  }
}

std::string TrainConfig::to_text() const { return canonical_text(*this, true); }

std::uint64_t TrainConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_text(*this, false)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(config, key, value);
  }
  config.validate();
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void save_config(const std::filesystem::path& path, const TrainConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << config.to_text();
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace dropmax
