#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssvaer/batch.hpp"
#include "ssvaer/tensor.hpp"

namespace ssvaer {

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Schema { debutanizer, sru, generic };

inline Schema parse_schema(const std::string& s) {
  if (s == "debutanizer") return Schema::debutanizer;
  if (s == "sru") return Schema::sru;
  if (s == "generic" || s == "synthetic") return Schema::generic;
  throw std::invalid_argument("unknown dataset schema '" + s + "'");
}

/// Time-ordered table of process variables plus one quality column.
struct RawSeries {
  std::vector<std::string> columns;
  Tensor table;  // rows x columns, sampling order
  std::vector<std::size_t> process_columns;
  std::size_t label_column = 0;

  std::size_t rows() const { return table.rows(); }
  std::size_t process_count() const { return process_columns.size(); }
  double process(std::size_t t, std::size_t var) const { return table(t, process_columns[var]); }
  double label(std::size_t t) const { return table(t, label_column); }
};

struct CsvOptions {
  bool header = false;
  /// generic: column index of the label, negative counts from the end.
  /// sru: which of the quality columns (0 = first).
  int label_index = -1;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  if (line.find(',') != std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  } else {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

inline double parse_cell(std::string_view s, std::size_t line, std::size_t col) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (s.empty() || ec != std::errc() || ptr != e) {
    throw DataError("line " + std::to_string(line) + ", column " + std::to_string(col + 1) +
                    ": cannot parse '" + std::string(s) + "' as a number");
  }
  if (!std::isfinite(v)) {
    throw DataError("line " + std::to_string(line) + ", column " + std::to_string(col + 1) +
                    ": non-finite value");
  }
  return v;
}

}  // namespace detail

/// Reads a comma- or whitespace-separated numeric table.
///
/// debutanizer: 7 process columns then the label. sru: 5 process columns then
/// one or more quality columns, `label_index` picks one. generic: any width,
/// label at `label_index`, every other column is a process variable.
inline RawSeries load_csv(const std::string& path, Schema schema, const CsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");

  std::vector<std::string> names;
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  bool header_pending = opt.header;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields.front().starts_with('#')) continue;
    if (header_pending) {
      for (auto f : fields) names.emplace_back(f);
      width = names.size();
      header_pending = false;
      continue;
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                      " columns, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) values.push_back(detail::parse_cell(fields[c], line_no, c));
    ++rows;
  }
  if (rows == 0) throw DataError("data file '" + path + "' has no records");

  RawSeries s;
  switch (schema) {
    case Schema::debutanizer:
      if (width != 8) throw DataError("debutanizer: expected 8 columns (7 process + label), found " + std::to_string(width));
      s.label_column = 7;
      for (std::size_t c = 0; c < 7; ++c) s.process_columns.push_back(c);
      break;
    case Schema::sru: {
      if (width < 6) throw DataError("sru: expected 5 process columns plus quality columns, found " + std::to_string(width));
      const auto pick = static_cast<std::size_t>(std::max(opt.label_index, 0));
      if (5 + pick >= width) throw DataError("sru: quality column " + std::to_string(pick) + " does not exist");
      s.label_column = 5 + pick;
      for (std::size_t c = 0; c < 5; ++c) s.process_columns.push_back(c);
      break;
    }
    case Schema::generic: {
      if (width < 2) throw DataError("generic: need at least one process column and a label");
      const long idx = opt.label_index < 0 ? static_cast<long>(width) + opt.label_index : opt.label_index;
      if (idx < 0 || idx >= static_cast<long>(width)) throw DataError("generic: label column out of range");
      s.label_column = static_cast<std::size_t>(idx);
      for (std::size_t c = 0; c < width; ++c)
        if (c != s.label_column) s.process_columns.push_back(c);
      break;
    }
  }
  if (names.empty()) {
    for (std::size_t c = 0; c < width; ++c) names.push_back("c" + std::to_string(c));
  }
  s.columns = std::move(names);
  s.table = Tensor(rows, width, std::move(values));
  return s;
}

/// Lagged design matrix with labels aligned to time t.
struct LaggedData {
  Tensor x;               // rows x sum(lag counts)
  std::vector<double> y;  // one per row
  std::size_t first_time = 0;  // source index of row 0
};

/// Row t holds, for each process variable v in order, x_v(t - l) for every l
/// in lags[v]. The first max-lag records are dropped.
inline LaggedData build_lagged(const RawSeries& s, const std::vector<std::vector<std::size_t>>& lags) {
  if (lags.size() != s.process_count()) {
    throw std::invalid_argument("build_lagged: " + std::to_string(lags.size()) + " lag sets for " +
                                std::to_string(s.process_count()) + " process variables");
  }
  std::size_t max_lag = 0;
  std::size_t width = 0;
  for (const auto& l : lags) {
    if (l.empty()) throw std::invalid_argument("build_lagged: empty lag set");
    width += l.size();
    for (auto v : l) max_lag = std::max(max_lag, v);
  }
  if (max_lag >= s.rows()) {
    throw std::invalid_argument("build_lagged: lag " + std::to_string(max_lag) +
                                " needs more than " + std::to_string(s.rows()) + " records");
  }
  LaggedData out;
  const auto n = s.rows() - max_lag;
  out.x = Tensor(n, width);
  out.y.resize(n);
  out.first_time = max_lag;
  for (std::size_t r = 0; r < n; ++r) {
    const auto t = r + max_lag;
    std::size_t c = 0;
    for (std::size_t v = 0; v < lags.size(); ++v)
      for (auto l : lags[v]) out.x(r, c++) = s.process(t - l, v);
    out.y[r] = s.label(t);
  }
  return out;
}

/// The same lag set for every process variable.
inline std::vector<std::vector<std::size_t>> uniform_lags(std::size_t variables, std::vector<std::size_t> lags) {
  return std::vector<std::vector<std::size_t>>(variables, std::move(lags));
}

/// Half-open row range.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Contiguous train / validation / test partitions, in time order.
inline std::array<Range, 3> split(std::size_t total, std::size_t train_n, std::size_t val_n, std::size_t test_n) {
  if (train_n + val_n + test_n != total) {
    throw std::invalid_argument("split: " + std::to_string(train_n) + " + " + std::to_string(val_n) +
                                " + " + std::to_string(test_n) + " = " +
                                std::to_string(train_n + val_n + test_n) + " does not equal " +
                                std::to_string(total) + " rows");
  }
  return {Range{0, train_n}, Range{train_n, train_n + val_n}, Range{train_n + val_n, total}};
}

/// Spacing between labelled records: round(1 / fraction).
inline std::size_t label_step(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("label fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  return static_cast<std::size_t>(std::llround(1.0 / fraction));
}

/// Indices {0, step, 2*step, ...} below n.
inline std::vector<std::size_t> mask_labels(std::size_t n, double fraction) {
  const auto step = label_step(fraction);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; i += step) out.push_back(i);
  return out;
}

/// Per-column z-scores fitted on training rows, plus a label scale.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
  double label_mean = 0.0;
  double label_scale = 1.0;

  static Standardizer fit(const Tensor& x, std::span<const double> labels) {
    if (x.rows() < 2) throw DataError("standardizer: need at least two training rows");
    if (labels.size() < 2) throw DataError("standardizer: need at least two labelled training rows");
    Standardizer s;
    s.mean.assign(x.cols(), 0.0);
    s.scale.assign(x.cols(), 0.0);
    const double n = static_cast<double>(x.rows());
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) m += x(r, c);
      m /= n;
      double v = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) v += (x(r, c) - m) * (x(r, c) - m);
      const double sd = std::sqrt(v / n);
      if (!(sd > 0.0)) throw DataError("standardizer: column " + std::to_string(c) + " is constant");
      s.mean[c] = m;
      s.scale[c] = sd;
    }
    double m = 0.0;
    for (double y : labels) m += y;
    m /= static_cast<double>(labels.size());
    double v = 0.0;
    for (double y : labels) v += (y - m) * (y - m);
    const double sd = std::sqrt(v / static_cast<double>(labels.size()));
    if (!(sd > 0.0)) throw DataError("standardizer: labels are constant");
    s.label_mean = m;
    s.label_scale = sd;
    return s;
  }

  Tensor transform(const Tensor& x) const {
    check(x);
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
    return out;
  }

  Tensor inverse(const Tensor& z) const {
    check(z);
    Tensor out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = z(r, c) * scale[c] + mean[c];
    return out;
  }

  double label_to_std(double y) const { return (y - label_mean) / label_scale; }
  double label_from_std(double z) const { return z * label_scale + label_mean; }

 private:
  void check(const Tensor& x) const {
    if (x.cols() != mean.size()) {
      throw ShapeError("standardizer: fitted on " + std::to_string(mean.size()) + " columns, got " +
                       std::to_string(x.cols()));
    }
  }
};

/// Consecutive-record pairs (i, i+1) of one partition.
///
/// The pairing is fixed; `batches` optionally shuffles pair order. The last
/// record only ever appears as a successor.
class PairSet {
 public:
  PairSet(Tensor x, std::vector<double> y, std::vector<std::uint8_t> mask)
      : x_(std::move(x)), y_(std::move(y)), mask_(std::move(mask)) {
    if (x_.rows() < 2) throw std::invalid_argument("make_pairs: need at least two records");
    if (y_.size() != x_.rows() || mask_.size() != x_.rows()) {
      throw ShapeError("make_pairs: labels/mask length differs from row count");
    }
  }

  std::size_t pair_count() const { return x_.rows() - 1; }
  const Tensor& records() const { return x_; }

  std::vector<SampleBatch> batches(std::size_t batch_size, std::mt19937_64* shuffle = nullptr) const {
    if (batch_size == 0) throw std::invalid_argument("make_pairs: batch size must be positive");
    std::vector<std::size_t> order(pair_count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) std::shuffle(order.begin(), order.end(), *shuffle);
    std::vector<SampleBatch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const auto end = std::min(order.size(), start + batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      out.push_back(make_batch(rows));
    }
    return out;
  }

  /// Every pair in index order as one batch.
  SampleBatch all() const {
    std::vector<std::size_t> rows(pair_count());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return make_batch(rows);
  }

 private:
  SampleBatch make_batch(const std::vector<std::size_t>& rows) const {
    SampleBatch b;
    std::vector<std::size_t> next(rows.size());
    std::transform(rows.begin(), rows.end(), next.begin(), [](std::size_t r) { return r + 1; });
    b.x_t = x_.select_rows(rows);
    b.x_next = x_.select_rows(next);
    b.y = Tensor(rows.size(), 1);
    b.mask.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      b.mask[i] = mask_[rows[i]];
      if (b.mask[i]) b.y[i] = y_[rows[i]];
    }
    b.rows = rows;
    return b;
  }

  Tensor x_;
  std::vector<double> y_;
  std::vector<std::uint8_t> mask_;
};

inline PairSet make_pairs(Tensor x, std::vector<double> y, std::vector<std::uint8_t> mask) {
  return PairSet(std::move(x), std::move(y), std::move(mask));
}

/// Labelled records only, batched in order (optionally shuffled), for
/// supervised baselines. x_next repeats x_t.
inline std::vector<SampleBatch> labelled_batches(const Tensor& x, const std::vector<double>& y,
                                                 const std::vector<std::uint8_t>& mask,
                                                 std::size_t batch_size, std::mt19937_64* shuffle = nullptr) {
  if (batch_size == 0) throw std::invalid_argument("labelled_batches: batch size must be positive");
  std::vector<std::size_t> lab;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) lab.push_back(i);
  if (lab.empty()) throw std::invalid_argument("labelled_batches: no labelled records");
  if (shuffle) std::shuffle(lab.begin(), lab.end(), *shuffle);
  std::vector<SampleBatch> out;
  for (std::size_t start = 0; start < lab.size(); start += batch_size) {
    const auto end = std::min(lab.size(), start + batch_size);
    std::vector<std::size_t> rows(lab.begin() + static_cast<std::ptrdiff_t>(start),
                                  lab.begin() + static_cast<std::ptrdiff_t>(end));
    SampleBatch b;
    b.x_t = x.select_rows(rows);
    b.x_next = b.x_t;
    b.y = Tensor(rows.size(), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) b.y[i] = y[rows[i]];
    b.mask.assign(rows.size(), 1);
    b.rows = std::move(rows);
    out.push_back(std::move(b));
  }
  return out;
}

/// Deterministic stand-in process: two slow latent factors drive five noisy
/// process variables and a quality variable with a one-step delay.
inline RawSeries synthetic_series(std::size_t rows, std::uint64_t seed) {
  if (rows < 2) throw std::invalid_argument("synthetic_series: need at least two rows");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RawSeries s;
  s.columns = {"x1", "x2", "x3", "x4", "x5", "y"};
  s.table = Tensor(rows, 6);
  s.process_columns = {0, 1, 2, 3, 4};
  s.label_column = 5;
  double a = 0.0, b = 0.0, a_prev = 0.0;
  for (std::size_t t = 0; t < rows; ++t) {
    a_prev = a;
    a = 0.95 * a + 0.3 * normal(rng);
    b = 0.9 * b + 0.4 * normal(rng);
    s.table(t, 0) = a + 0.1 * normal(rng);
    s.table(t, 1) = std::tanh(b) + 0.1 * normal(rng);
    s.table(t, 2) = 0.5 * a * b + 0.1 * normal(rng);
    s.table(t, 3) = 0.7 * a - 0.4 * b + 0.1 * normal(rng);
    s.table(t, 4) = std::sin(a) + 0.1 * normal(rng);
    s.table(t, 5) = 0.6 * a_prev + 0.3 * std::tanh(b) + 0.05 * normal(rng);
  }
  return s;
}

}  // namespace ssvaer
