#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ssvaer/config.hpp"
#include "ssvaer/dataset.hpp"
#include "ssvaer/models.hpp"

namespace ssvaer {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Trained parameters with everything needed to reproduce predictions.
struct Checkpoint {
  ExperimentConfig config;
  Standardizer standardizer;
  Model model;
  double best_val_loss = 0.0;
  int epoch = -1;

  LabelScale label_scale() const { return {standardizer.label_mean, standardizer.label_scale}; }
};

/// Text checkpoint. Doubles are written in shortest round-trip form, so a
/// reload restores every parameter bit for bit.
inline std::string serialize_checkpoint(Checkpoint& ck) {
  using detail::format_double;
  std::ostringstream o;
  const auto ini = to_ini(ck.config);
  o << "ssvaer-checkpoint " << kCheckpointVersion << "\n";
  o << "config " << ini.size() << "\n" << ini;
  const auto& st = ck.standardizer;
  o << "standardizer " << st.mean.size() << "\n";
  for (double v : st.mean) o << format_double(v) << " ";
  o << "\n";
  for (double v : st.scale) o << format_double(v) << " ";
  o << "\n" << format_double(st.label_mean) << " " << format_double(st.label_scale) << "\n";
  o << "state " << ck.epoch << " " << format_double(ck.best_val_loss) << "\n";
  const auto params = named_parameters(ck.model);
  o << "params " << params.size() << "\n";
  for (const auto& [name, t] : params) {
    o << name << " " << t->rows() << " " << t->cols();
    for (double v : t->values()) o << " " << format_double(v);
    o << "\n";
  }
  o << "end\n";
  return o.str();
}

inline void save_checkpoint(Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << serialize_checkpoint(ck);
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

namespace detail {

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word(const char* what) {
    std::string s;
    if (!(in_ >> s)) throw CheckpointError(std::string("corrupt checkpoint: truncated before ") + what);
    return s;
  }
  void expect(const char* keyword) {
    const auto w = word(keyword);
    if (w != keyword) throw CheckpointError(std::string("corrupt checkpoint: expected '") + keyword + "', found '" + w + "'");
  }
  template <class T>
  T number(const char* what) {
    const auto s = word(what);
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw CheckpointError(std::string("corrupt checkpoint: bad ") + what + " '" + s + "'");
    }
    return v;
  }
  std::istream& stream() { return in_; }

 private:
  std::istream& in_;
};

}  // namespace detail

inline Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  detail::TokenReader r(in);
  if (r.word("header") != "ssvaer-checkpoint") throw CheckpointError("not a checkpoint file");
  const int version = r.number<int>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  r.expect("config");
  const auto len = r.number<std::size_t>("config length");
  in.get();  // newline
  std::string ini(len, '\0');
  if (!in.read(ini.data(), static_cast<std::streamsize>(len))) throw CheckpointError("corrupt checkpoint: truncated config");

  Checkpoint ck;
  try {
    ck.config = parse_config(ini);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: embedded config: ") + e.what());
  }
  r.expect("standardizer");
  const auto width = r.number<std::size_t>("standardizer width");
  ck.standardizer.mean.resize(width);
  ck.standardizer.scale.resize(width);
  for (auto& v : ck.standardizer.mean) v = r.number<double>("standardizer mean");
  for (auto& v : ck.standardizer.scale) v = r.number<double>("standardizer scale");
  ck.standardizer.label_mean = r.number<double>("label mean");
  ck.standardizer.label_scale = r.number<double>("label scale");
  r.expect("state");
  ck.epoch = r.number<int>("epoch");
  ck.best_val_loss = r.number<double>("best validation loss");

  try {
    ck.model = create_model(ck.config.model, ck.config.sizes, width, ck.config.seed);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: embedded config does not describe a model: ") + e.what());
  }
  auto params = named_parameters(ck.model);
  r.expect("params");
  const auto count = r.number<std::size_t>("parameter count");
  if (count != params.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(count) + " parameter tensors, config implies " +
                          std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    const auto got = r.word("parameter name");
    if (got != name) throw CheckpointError("corrupt checkpoint: expected parameter '" + name + "', found '" + got + "'");
    const auto rows = r.number<std::size_t>("rows");
    const auto cols = r.number<std::size_t>("cols");
    if (rows != t->rows() || cols != t->cols()) {
      throw CheckpointError("checkpoint: parameter '" + name + "' is " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " but the embedded layer sizes give " + t->shape_string());
    }
    for (auto& v : t->values()) v = r.number<double>("parameter value");
  }
  r.expect("end");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace ssvaer
