#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <array>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "ssvaer/checkpoint.hpp"
#include "ssvaer/config.hpp"
#include "ssvaer/dataset.hpp"
#include "ssvaer/models.hpp"
#include "ssvaer/optimizer.hpp"

namespace ssvaer {

// ---- data preparation ------------------------------------------------------

/// One contiguous partition after lagging and standardization.
struct Partition {
  Tensor x;                          // standardized inputs
  std::vector<double> y;             // labels in original units
  std::vector<double> y_std;         // standardized labels
  std::vector<std::uint8_t> mask;    // labelled records
  std::size_t first_time = 0;        // source record index of row 0

  std::size_t size() const { return x.rows(); }
  std::size_t labelled_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

struct PreparedData {
  Standardizer standardizer;
  Partition train;
  Partition val;
  Partition test;

  std::size_t input_width() const { return train.x.cols(); }
};

inline RawSeries load_series(const DataConfig& d) {
  if (d.dataset == "synthetic") return synthetic_series(d.synthetic_rows, d.synthetic_seed);
  return load_csv(d.path, parse_schema(d.dataset), CsvOptions{d.header, d.label_index});
}

/// Train/validation/test sizes; train_n = 0 takes the remainder.
inline std::array<Range, 3> resolve_split(const DataConfig& d, std::size_t total) {
  std::size_t train = d.train_n;
  if (train == 0) {
    if (d.val_n + d.test_n >= total) {
      throw DataError("split: validation (" + std::to_string(d.val_n) + ") plus test (" +
                      std::to_string(d.test_n) + ") leave no training rows out of " + std::to_string(total));
    }
    train = total - d.val_n - d.test_n;
  }
  return split(total, train, d.val_n, d.test_n);
}

/// Lags, splits, masks and standardizes. With `fixed` the given statistics
/// are reused instead of refitting on the training rows.
inline PreparedData prepare_data(const ExperimentConfig& c, const RawSeries& series,
                                 const Standardizer* fixed = nullptr) {
  const auto lagged = build_lagged(series, uniform_lags(series.process_count(), c.data.lags));
  const auto parts = resolve_split(c.data, lagged.x.rows());

  auto take = [&](const Range& r, bool masked) {
    Partition p;
    std::vector<std::size_t> rows(r.size());
    std::iota(rows.begin(), rows.end(), r.begin);
    p.x = lagged.x.select_rows(rows);
    p.y.assign(lagged.y.begin() + static_cast<std::ptrdiff_t>(r.begin),
               lagged.y.begin() + static_cast<std::ptrdiff_t>(r.end));
    p.mask.assign(r.size(), masked ? 0 : 1);
    if (masked)
      for (auto i : mask_labels(r.size(), c.fraction)) p.mask[i] = 1;
    p.first_time = lagged.first_time + r.begin;
    return p;
  };
  PreparedData out;
  out.train = take(parts[0], true);
  out.val = take(parts[1], true);
  out.test = take(parts[2], false);

  if (fixed) {
    out.standardizer = *fixed;
  } else {
    std::vector<double> labels;
    for (std::size_t i = 0; i < out.train.size(); ++i)
      if (out.train.mask[i]) labels.push_back(out.train.y[i]);
    out.standardizer = Standardizer::fit(out.train.x, labels);
  }
  for (auto* p : {&out.train, &out.val, &out.test}) {
    if (p->size() == 0) continue;
    p->x = out.standardizer.transform(p->x);
    p->y_std.resize(p->y.size());
    for (std::size_t i = 0; i < p->y.size(); ++i) p->y_std[i] = out.standardizer.label_to_std(p->y[i]);
  }
  return out;
}

inline PreparedData prepare_data(const ExperimentConfig& c) { return prepare_data(c, load_series(c.data)); }

// ---- evaluation -------------------------------------------------------------

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ShapeError("rmse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Predictions in label units, evaluated `batch_size` rows at a time
/// (0 = all at once).
inline Prediction predict_partition(const Model& model, const LabelScale& scale, const Tensor& x,
                                    std::size_t batch_size = 0) {
  if (batch_size == 0 || batch_size >= x.rows()) return predict_y(model, x, scale);
  Prediction out;
  for (std::size_t start = 0; start < x.rows(); start += batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t r = start; r < std::min(x.rows(), start + batch_size); ++r) rows.push_back(r);
    auto p = predict_y(model, x.select_rows(rows), scale);
    out.mean.insert(out.mean.end(), p.mean.begin(), p.mean.end());
    out.variance.insert(out.variance.end(), p.variance.begin(), p.variance.end());
  }
  return out;
}

/// RMSE in original label units against every true label of `part`.
inline double evaluate_rmse(const Checkpoint& ck, const Partition& part, std::size_t batch_size = 0) {
  if (part.size() == 0) throw std::invalid_argument("evaluate_rmse: empty split");
  const auto p = predict_partition(ck.model, ck.label_scale(), part.x, batch_size);
  return rmse(p.mean, part.y);
}

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Two-sided normal quantile: P(|Z| <= z) = level.
inline double normal_half_width(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw std::invalid_argument("confidence level must be in (0, 1), got " + std::to_string(level));
  }
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// mean +/- z(level) * sigma per row.
inline std::vector<Interval> predict_ci(const Prediction& p, double level = 0.95) {
  const double z = normal_half_width(level);
  std::vector<Interval> out(p.mean.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double half = z * std::sqrt(p.variance[i]);
    out[i] = {p.mean[i], p.mean[i] - half, p.mean[i] + half};
  }
  return out;
}

inline std::vector<Interval> predict_ci(const Checkpoint& ck, const Tensor& x, double level = 0.95) {
  return predict_ci(predict_y(ck.model, x, ck.label_scale()), level);
}

/// Per row: latent means (Nz columns), predicted label standard deviation,
/// true label.
inline Tensor export_latent(const Checkpoint& ck, const Partition& part) {
  const Tensor z = latent_means(ck.model, part.x);
  const auto p = predict_y(ck.model, part.x, ck.label_scale());
  Tensor out(part.size(), z.cols() + 2);
  for (std::size_t r = 0; r < part.size(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = z(r, c);
    out(r, z.cols()) = std::sqrt(p.variance[r]);
    out(r, z.cols() + 1) = r < part.y.size() ? part.y[r] : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ---- training ---------------------------------------------------------------

struct MetricsRow {
  int epoch = 0;
  double lr = 0.0;
  LossTerms train;
  double val_loss = 0.0;
  double val_rmse = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  double test_rmse = std::numeric_limits<double>::quiet_NaN();

  static constexpr const char* kHeader =
      "epoch,lr,rec,kl,label,entropy,pv,recon_reg,total,val_loss,val_rmse";

  std::string to_csv() const {
    using detail::format_double;
    std::ostringstream o;
    o << kHeader << "\n";
    for (const auto& r : rows) {
      o << r.epoch << "," << format_double(r.lr) << "," << format_double(r.train.rec) << ","
        << format_double(r.train.kl) << "," << format_double(r.train.label) << ","
        << format_double(r.train.entropy) << "," << format_double(r.train.pv) << ","
        << format_double(r.train.recon_reg) << "," << format_double(r.train.total) << ","
        << format_double(r.val_loss) << "," << format_double(r.val_rmse) << "\n";
    }
    return o.str();
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  MetricsLog log;
};

namespace detail {

inline std::size_t latent_width_of(const Model& m) {
  if (auto* s = std::get_if<SsvaerModel>(&m)) return s->latent_width();
  if (auto* s = std::get_if<SvaerModel>(&m)) return s->latent_width();
  return 1;
}

/// Builds the model's objective on `g`; returns (graph of terms).
inline LossGraph build_loss(Graph& g, Model& model, const SampleBatch& batch, const BatchNoise& noise,
                            const LossWeights& w) {
  return std::visit(
      [&](auto& m) -> LossGraph {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, SsvaerModel>) {
          return ssvaer_loss_terms(g, m, batch, noise, w);
        } else if constexpr (std::is_same_v<M, SvaerModel>) {
          return svaer_loss_terms(g, m, batch, noise, w);
        } else {
          LossGraph lg;
          lg.label = fcnn_loss(g, m, batch);
          lg.total = lg.label;
          return lg;
        }
      },
      model);
}

inline void add_terms(LossTerms& acc, const LossTerms& t, double scale) {
  acc.rec += scale * t.rec;
  acc.kl += scale * t.kl;
  acc.label += scale * t.label;
  acc.entropy += scale * t.entropy;
  acc.pv += scale * t.pv;
  acc.recon_reg += scale * t.recon_reg;
  acc.total += scale * t.total;
}

}  // namespace detail

/// Full training objective on the validation partition, with noise drawn
/// from a fixed seed so that epochs are compared on equal footing.
inline double validation_loss(Model& model, const Partition& val, const ExperimentConfig& c) {
  if (kind_of(model) == ModelKind::fcnn) {
    const auto batches = labelled_batches(val.x, val.y_std, val.mask, std::max<std::size_t>(val.size(), 1));
    Graph g;
    return g.scalar(detail::build_loss(g, model, batches.front(), {}, c.weights).total);
  }
  const auto batch = make_pairs(val.x, val.y_std, val.mask).all();
  std::mt19937_64 rng(detail::sub_seed(c.seed, 301));
  const auto noise = BatchNoise::draw(rng, batch.size(), detail::latent_width_of(model));
  Graph g;
  return g.scalar(detail::build_loss(g, model, batch, noise, c.weights).total);
}

/// Algorithm loop: per epoch, shuffled batches, one Adam step per batch at
/// the epoch's learning rate, then validation. Keeps the parameters with the
/// lowest validation score.
inline TrainResult train(const ExperimentConfig& c, const PreparedData& data) {
  c.validate();
  const bool fcnn = c.model == ModelKind::fcnn;
  if (fcnn && data.train.labelled_count() == 0) throw std::invalid_argument("train: fcnn needs labelled rows");
  const bool has_val = fcnn ? data.val.labelled_count() > 0 : data.val.size() >= 2;

  Model model = create_model(c.model, c.sizes, data.input_width(), c.seed);
  auto named = named_parameters(model);
  std::vector<Tensor*> params;
  std::vector<std::string> names;
  for (auto& [n, t] : named) {
    names.push_back(n);
    params.push_back(t);
  }
  AdamState adam;
  std::mt19937_64 shuffle_rng(detail::sub_seed(c.seed, 101));
  std::mt19937_64 noise_rng(detail::sub_seed(c.seed, 102));
  const std::size_t nz = detail::latent_width_of(model);
  std::optional<PairSet> pairs;
  if (!fcnn) pairs.emplace(data.train.x, data.train.y_std, data.train.mask);

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  const LabelScale scale{data.standardizer.label_mean, data.standardizer.label_scale};

  for (int epoch = 0; epoch < c.schedule.total_epochs; ++epoch) {
    const double lr = lr_at(c.schedule, epoch);
    const auto batches = fcnn ? labelled_batches(data.train.x, data.train.y_std, data.train.mask, c.batch_size, &shuffle_rng)
                              : pairs->batches(c.batch_size, &shuffle_rng);
    MetricsRow row;
    row.epoch = epoch;
    row.lr = lr;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      const auto noise = fcnn ? BatchNoise{} : BatchNoise::draw(noise_rng, batch.size(), nz);
      for (Tensor* p : params) p->zero_grad();
      try {
        Graph g;
        const auto lg = detail::build_loss(g, model, batch, noise, c.weights);
        g.backward(lg.total);
        detail::add_terms(row.train, lg.values(g), 1.0 / static_cast<double>(batches.size()));
        adam_step(params, adam, lr, names);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      if (auto* sv = std::get_if<SvaerModel>(&model)) sv->normalize_direction();
    }
    row.val_loss = has_val ? validation_loss(model, data.val, c) : row.train.total;
    row.val_rmse = data.val.size() > 0 ? rmse(predict_y(model, data.val.x, scale).mean, data.val.y)
                                       : std::numeric_limits<double>::quiet_NaN();
    const double score = c.select_by_rmse && data.val.size() > 0 ? row.val_rmse : row.val_loss;
    if (score < best) {
      best = score;
      result.checkpoint.model = model;
      result.checkpoint.epoch = epoch;
      result.checkpoint.best_val_loss = score;
    }
    result.log.rows.push_back(row);
  }
  if (result.checkpoint.epoch < 0) throw NumericError("train: no epoch produced a finite validation score");
  for (auto& np : named_parameters(result.checkpoint.model)) np.second->drop_grad();
  result.checkpoint.config = c;
  result.checkpoint.standardizer = data.standardizer;
  if (data.test.size() > 0) result.log.test_rmse = evaluate_rmse(result.checkpoint, data.test);
  return result;
}

inline TrainResult train(const ExperimentConfig& c) { return train(c, prepare_data(c)); }

// ---- sweeps -----------------------------------------------------------------

/// The label percentages of the benchmark study.
inline const std::vector<double>& study_fractions() {
  static const std::vector<double> f{0.01, 0.02, 0.05, 0.10, 0.142, 0.20, 0.25, 0.333, 0.50, 1.0};
  return f;
}

struct SweepCell {
  ModelKind model = ModelKind::ssvaer;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  double test_rmse = 0.0;
  int best_epoch = -1;
  MetricsLog log;
};

struct SweepResult {
  std::vector<double> fractions;
  std::vector<ModelKind> models;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepCell> cells;  // ordered by (model, fraction, seed)

  const SweepCell& cell(ModelKind m, double f, std::uint64_t s) const {
    for (const auto& c : cells)
      if (c.model == m && c.fraction == f && c.seed == s) return c;
    throw std::out_of_range("sweep: no such cell");
  }
};

/// "14.2%", "1%", "33.3%".
inline std::string fraction_label(double f) {
  std::ostringstream o;
  o.precision(4);
  o << f * 100.0;
  return o.str() + "%";
}

/// Trains one model per (model kind, fraction, seed); cells run on up to
/// `threads` workers and are merged in key order.
inline SweepResult sweep(const ExperimentConfig& base, std::vector<double> fractions,
                         std::vector<ModelKind> models, std::vector<std::uint64_t> seeds,
                         unsigned threads = 0) {
  if (fractions.empty()) throw std::invalid_argument("sweep: empty fraction list");
  if (models.empty()) throw std::invalid_argument("sweep: empty model list");
  if (seeds.empty()) throw std::invalid_argument("sweep: empty seed list");
  for (double f : fractions) label_step(f);

  const RawSeries series = load_series(base.data);
  SweepResult out{fractions, models, seeds, {}};
  for (auto m : models)
    for (double f : fractions)
      for (auto s : seeds) out.cells.push_back({m, f, s, 0.0, -1, {}});

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < out.cells.size(); i = next++) {
      auto& cell = out.cells[i];
      try {
        ExperimentConfig c = base;
        c.model = cell.model;
        c.fraction = cell.fraction;
        c.seed = cell.seed;
        auto r = train(c, prepare_data(c, series));
        cell.test_rmse = r.log.test_rmse;
        cell.best_epoch = r.checkpoint.epoch;
        cell.log = std::move(r.log);
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        if (first_error.empty()) {
          first_error = to_string(cell.model) + " @ " + fraction_label(cell.fraction) + " seed " +
                        std::to_string(cell.seed) + ": " + e.what();
        }
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(out.cells.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!first_error.empty()) throw std::runtime_error("sweep: " + first_error);
  return out;
}

/// Methods x fractions table of mean test RMSE over seeds.
inline std::string sweep_table_csv(const SweepResult& r) {
  using detail::format_double;
  std::ostringstream o;
  o << "Label%";
  for (double f : r.fractions) o << "," << fraction_label(f);
  o << "\n";
  for (auto m : r.models) {
    std::string name = to_string(m);
    std::transform(name.begin(), name.end(), name.begin(), ::toupper);
    o << name;
    for (double f : r.fractions) {
      double s = 0.0;
      for (auto seed : r.seeds) s += r.cell(m, f, seed).test_rmse;
      o << "," << format_double(s / static_cast<double>(r.seeds.size()));
    }
    o << "\n";
  }
  return o.str();
}

/// Long form: one row per cell, plus the spread across seeds of that
/// (model, fraction) pair.
inline std::string sweep_long_csv(const SweepResult& r) {
  using detail::format_double;
  std::ostringstream o;
  o << "model,fraction,seed,test_rmse,best_epoch,mean_rmse,sd_rmse\n";
  for (const auto& c : r.cells) {
    double mean = 0.0, sq = 0.0;
    for (auto s : r.seeds) mean += r.cell(c.model, c.fraction, s).test_rmse;
    mean /= static_cast<double>(r.seeds.size());
    for (auto s : r.seeds) {
      const double d = r.cell(c.model, c.fraction, s).test_rmse - mean;
      sq += d * d;
    }
    const double sd = r.seeds.size() > 1 ? std::sqrt(sq / static_cast<double>(r.seeds.size() - 1)) : 0.0;
    o << to_string(c.model) << "," << format_double(c.fraction) << "," << c.seed << ","
      << format_double(c.test_rmse) << "," << c.best_epoch << "," << format_double(mean) << ","
      << format_double(sd) << "\n";
  }
  return o.str();
}

/// Per-epoch training loss terms of every cell.
inline std::string sweep_terms_csv(const SweepResult& r) {
  using detail::format_double;
  std::ostringstream o;
  o << "model,fraction,seed,epoch,rec,kl,label,entropy,pv,recon_reg,total,val_loss\n";
  for (const auto& c : r.cells) {
    for (const auto& row : c.log.rows) {
      o << to_string(c.model) << "," << format_double(c.fraction) << "," << c.seed << "," << row.epoch << ","
        << format_double(row.train.rec) << "," << format_double(row.train.kl) << ","
        << format_double(row.train.label) << "," << format_double(row.train.entropy) << ","
        << format_double(row.train.pv) << "," << format_double(row.train.recon_reg) << ","
        << format_double(row.train.total) << "," << format_double(row.val_loss) << "\n";
    }
  }
  return o.str();
}

// ---- file output --------------------------------------------------------------

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

/// index,truth,prediction,lower,upper
inline std::string ci_trace_csv(const std::vector<Interval>& ci, std::span<const double> truth) {
  using detail::format_double;
  std::ostringstream o;
  o << "index,truth,prediction,lower,upper\n";
  for (std::size_t i = 0; i < ci.size(); ++i) {
    o << i << "," << (i < truth.size() ? format_double(truth[i]) : "nan") << "," << format_double(ci[i].mean)
      << "," << format_double(ci[i].lower) << "," << format_double(ci[i].upper) << "\n";
  }
  return o.str();
}

inline std::string latent_csv(const Tensor& table) {
  using detail::format_double;
  std::ostringstream o;
  const auto nz = table.cols() - 2;
  for (std::size_t c = 0; c < nz; ++c) o << "z" << c + 1 << ",";
  o << "y_std,y_true\n";
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.cols(); ++c) o << (c ? "," : "") << format_double(table(r, c));
    o << "\n";
  }
  return o.str();
}

}  // namespace ssvaer
