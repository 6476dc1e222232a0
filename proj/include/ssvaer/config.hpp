#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ssvaer/dataset.hpp"
#include "ssvaer/models.hpp"
#include "ssvaer/optimizer.hpp"

namespace ssvaer {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string dataset = "synthetic";  // debutanizer | sru | generic | synthetic
  std::string path;
  bool header = false;
  int label_index = -1;
  std::vector<std::size_t> lags{0, 1, 2};
  /// 0 means "every row not taken by validation and test".
  std::size_t train_n = 0;
  std::size_t val_n = 100;
  std::size_t test_n = 100;
  std::size_t synthetic_rows = 600;
  std::uint64_t synthetic_seed = 7;
};

struct ExperimentConfig {
  DataConfig data;
  ModelKind model = ModelKind::ssvaer;
  NetworkSizes sizes;
  LossWeights weights;
  double fraction = 0.2;
  std::uint64_t seed = 1;
  LrSchedule schedule;
  std::size_t batch_size = 200;
  bool select_by_rmse = false;
  std::string output_dir = "out";

  /// Protocol defaults for a named dataset.
  static ExperimentConfig defaults_for(const std::string& dataset) {
    ExperimentConfig c;
    c.data.dataset = dataset;
    if (dataset == "debutanizer") {
      c.data.path = "data/debutanizer_data.txt";
      c.data.header = true;
      c.data.lags = {0, 5, 7, 9};
      c.data.val_n = 477;
      c.data.test_n = 477;
    } else if (dataset == "sru") {
      c.data.path = "data/SRU_data.txt";
      c.data.header = true;
      c.data.label_index = 0;
      c.data.lags = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
      c.data.val_n = 2000;
      c.data.test_n = 2071;
    } else if (dataset == "generic" || dataset == "synthetic") {
      // defaults above
    } else {
      throw ConfigError("unknown dataset '" + dataset + "'");
    }
    return c;
  }

  void validate() const {
    try {
      sizes.validate(model);
      schedule.validate();
      label_step(fraction);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (data.lags.empty()) throw ConfigError("data.lags must not be empty");
    if (data.dataset != "synthetic" && data.path.empty()) throw ConfigError("data.path is required");
  }
};

namespace detail {

inline std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError(key + ": empty list entry");
    item = item.substr(b, e - b + 1);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError(key + ": '" + item + "' is not a non-negative integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key + ": cannot parse '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

}  // namespace detail

/// Applies one "section.key = value" setting.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& d = c.data;
  auto& w = c.weights;
  auto& s = c.schedule;
  if (key == "data.dataset") {
    // selects the defaults in parse_config
  } else if (key == "data.path") d.path = value;
  else if (key == "data.header") d.header = parse_bool(key, value);
  else if (key == "data.label_index") d.label_index = parse_number<int>(key, value);
  else if (key == "data.lags") d.lags = parse_sizes(key, value);
  else if (key == "data.train_n") d.train_n = parse_number<std::size_t>(key, value);
  else if (key == "data.val_n") d.val_n = parse_number<std::size_t>(key, value);
  else if (key == "data.test_n") d.test_n = parse_number<std::size_t>(key, value);
  else if (key == "data.rows") d.synthetic_rows = parse_number<std::size_t>(key, value);
  else if (key == "data.data_seed") d.synthetic_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "model.kind") {
    try { c.model = parse_model_kind(value); } catch (const std::invalid_argument& e) { throw ConfigError(e.what()); }
  }
  else if (key == "model.shared") c.sizes.shared = parse_sizes(key, value);
  else if (key == "model.latent") c.sizes.latent = parse_sizes(key, value);
  else if (key == "model.regressor") c.sizes.regressor = parse_sizes(key, value);
  else if (key == "model.generator") c.sizes.generator = parse_sizes(key, value);
  else if (key == "model.decoder") c.sizes.decoder = parse_sizes(key, value);
  else if (key == "model.activation") {
    try { c.sizes.activation = parse_activation(value); } catch (const std::invalid_argument& e) { throw ConfigError(e.what()); }
  }
  else if (key == "weights.rec") w.rec = parse_number<double>(key, value);
  else if (key == "weights.kl") w.kl = parse_number<double>(key, value);
  else if (key == "weights.label") w.label = parse_number<double>(key, value);
  else if (key == "weights.entropy") w.entropy = parse_number<double>(key, value);
  else if (key == "weights.pv") w.pv = parse_number<double>(key, value);
  else if (key == "weights.recon_reg") w.recon_reg = parse_number<double>(key, value);
  else if (key == "weights.entropy_minimizing") w.entropy_minimizing = parse_bool(key, value);
  else if (key == "train.fraction") c.fraction = parse_number<double>(key, value);
  else if (key == "train.seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train.epochs") s.total_epochs = parse_number<int>(key, value);
  else if (key == "train.warmup") s.warmup_epochs = parse_number<int>(key, value);
  else if (key == "train.lr_max") s.lr_max = parse_number<double>(key, value);
  else if (key == "train.lr_min") s.lr_min = parse_number<double>(key, value);
  else if (key == "train.batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "train.select_by") {
    if (value == "loss") c.select_by_rmse = false;
    else if (value == "rmse") c.select_by_rmse = true;
    else throw ConfigError("train.select_by: expected loss or rmse, got '" + value + "'");
  }
  else if (key == "output.dir") c.output_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Parses flat INI text: "[section]" headers and "key = value" lines.
/// Lines starting with '#' or ';' are comments. Keys not set keep the
/// defaults of the named dataset.
inline ExperimentConfig parse_config(const std::string& text) {
  std::string cleaned;
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto b = line.find_first_not_of(" \t");
      if (b != std::string::npos && line[b] == '#') continue;
      cleaned += line + "\n";
    }
  }
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(cleaned);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const auto dataset = tree.get<std::string>("data.dataset", "synthetic");
  ExperimentConfig c = ExperimentConfig::defaults_for(dataset);
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError("config: key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : body) apply_setting(c, section + "." + key, value.data());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Fully resolved configuration as INI text; parse_config(to_ini(c)) == c.
inline std::string to_ini(const ExperimentConfig& c) {
  using detail::format_double;
  std::ostringstream o;
  o << "[data]\n"
    << "dataset = " << c.data.dataset << "\n"
    << "path = " << c.data.path << "\n"
    << "header = " << (c.data.header ? "true" : "false") << "\n"
    << "label_index = " << c.data.label_index << "\n"
    << "lags = " << detail::join(c.data.lags) << "\n"
    << "train_n = " << c.data.train_n << "\n"
    << "val_n = " << c.data.val_n << "\n"
    << "test_n = " << c.data.test_n << "\n"
    << "rows = " << c.data.synthetic_rows << "\n"
    << "data_seed = " << c.data.synthetic_seed << "\n\n"
    << "[model]\n"
    << "kind = " << to_string(c.model) << "\n"
    << "shared = " << detail::join(c.sizes.shared) << "\n"
    << "latent = " << detail::join(c.sizes.latent) << "\n"
    << "regressor = " << detail::join(c.sizes.regressor) << "\n"
    << "generator = " << detail::join(c.sizes.generator) << "\n"
    << "decoder = " << detail::join(c.sizes.decoder) << "\n"
    << "activation = " << to_string(c.sizes.activation) << "\n\n"
    << "[weights]\n"
    << "rec = " << format_double(c.weights.rec) << "\n"
    << "kl = " << format_double(c.weights.kl) << "\n"
    << "label = " << format_double(c.weights.label) << "\n"
    << "entropy = " << format_double(c.weights.entropy) << "\n"
    << "pv = " << format_double(c.weights.pv) << "\n"
    << "recon_reg = " << format_double(c.weights.recon_reg) << "\n"
    << "entropy_minimizing = " << (c.weights.entropy_minimizing ? "true" : "false") << "\n\n"
    << "[train]\n"
    << "fraction = " << format_double(c.fraction) << "\n"
    << "seed = " << c.seed << "\n"
    << "epochs = " << c.schedule.total_epochs << "\n"
    << "warmup = " << c.schedule.warmup_epochs << "\n"
    << "lr_max = " << format_double(c.schedule.lr_max) << "\n"
    << "lr_min = " << format_double(c.schedule.lr_min) << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "select_by = " << (c.select_by_rmse ? "rmse" : "loss") << "\n\n"
    << "[output]\n"
    << "dir = " << c.output_dir << "\n";
  return o.str();
}

/// Sets the epoch count; a warmup that no longer fits shrinks to a fifth of
/// the run (the 60/300 ratio).
inline void set_epochs(ExperimentConfig& c, int epochs) {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  c.schedule.total_epochs = epochs;
  if (c.schedule.warmup_epochs >= epochs) c.schedule.warmup_epochs = epochs / 5;
}

}  // namespace ssvaer
