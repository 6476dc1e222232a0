// ssvaer_cli: train, evaluate, sweep, predict, export-latent, inspect-data.
//
// Exit status: 0 on success, 2 for bad invocations or configuration, 1 for
// failures while running. Errors are one line on stderr, "error: <message>".

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssvaer/ssvaer.hpp"

namespace fs = std::filesystem;
using namespace ssvaer;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction;
  std::optional<int> epochs;
  std::optional<std::string> model;
  std::optional<std::string> out;

  void attach(CLI::App* cmd, bool need_config) {
    auto* opt = cmd->add_option("--config", config, "experiment config (INI)")->check(CLI::ExistingFile);
    if (need_config) opt->required();
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--fraction", fraction, "label fraction in (0, 1]");
    cmd->add_option("--epochs", epochs, "total epochs");
    cmd->add_option("--model", model, "ssvaer | svaer | fcnn");
    cmd->add_option("--out", out, "output directory");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig::defaults_for("synthetic") : load_config(config);
    if (seed) c.seed = *seed;
    if (fraction) apply_setting(c, "train.fraction", detail::format_double(*fraction));
    if (epochs) set_epochs(c, *epochs);
    if (model) apply_setting(c, "model.kind", *model);
    if (out) c.output_dir = *out;
    c.validate();
    return c;
  }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

const Partition& pick_split(const PreparedData& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw UsageError("--split must be train, val or test, got '" + name + "'");
}

PreparedData data_for(const Checkpoint& ck) { return prepare_data(ck.config, load_series(ck.config.data), &ck.standardizer); }

std::string summary_csv(const TrainResult& r) {
  std::ostringstream o;
  o << "model,fraction,seed,best_epoch,best_val,test_rmse\n"
    << to_string(r.checkpoint.config.model) << "," << detail::format_double(r.checkpoint.config.fraction) << ","
    << r.checkpoint.config.seed << "," << r.checkpoint.epoch << "," << detail::format_double(r.checkpoint.best_val_loss)
    << "," << detail::format_double(r.log.test_rmse) << "\n";
  return o.str();
}

int run_train(const Overrides& ov) {
  const auto c = ov.resolve();
  const auto dir = prepare_dir(c.output_dir);
  write_text((dir / "config.ini").string(), to_ini(c));
  const auto data = prepare_data(c);
  auto r = train(c, data);
  save_checkpoint(r.checkpoint, (dir / "checkpoint.txt").string());
  write_text((dir / "metrics.csv").string(), r.log.to_csv());
  write_text((dir / "summary.csv").string(), summary_csv(r));
  if (data.test.size() > 0) {
    const auto ci = predict_ci(r.checkpoint, data.test.x, 0.95);
    write_text((dir / "ci_test.csv").string(), ci_trace_csv(ci, data.test.y));
  }
  std::cout << to_string(c.model) << " fraction " << c.fraction << " seed " << c.seed << ": best epoch "
            << r.checkpoint.epoch << ", test RMSE " << r.log.test_rmse << "\n"
            << "wrote " << dir.string() << "\n";
  return 0;
}

int run_evaluate(const std::string& path, const std::string& split, std::size_t batch, const std::optional<std::string>& out) {
  const auto ck = load_checkpoint(path);
  const auto data = data_for(ck);
  const double v = evaluate_rmse(ck, pick_split(data, split), batch);
  std::cout << "rmse(" << split << ") = " << detail::format_double(v) << "\n";
  if (out) {
    const auto dir = prepare_dir(*out);
    write_text((dir / "evaluation.csv").string(), "split,rmse\n" + split + "," + detail::format_double(v) + "\n");
  }
  return 0;
}

int run_predict(const std::string& path, const std::string& split, double level, const std::string& out) {
  const auto ck = load_checkpoint(path);
  const auto data = data_for(ck);
  const auto& part = pick_split(data, split);
  const auto ci = predict_ci(ck, part.x, level);
  const auto dir = prepare_dir(out);
  const auto file = dir / ("ci_" + split + ".csv");
  write_text(file.string(), ci_trace_csv(ci, part.y));
  std::size_t inside = 0;
  for (std::size_t i = 0; i < ci.size(); ++i) inside += ci[i].lower <= part.y[i] && part.y[i] <= ci[i].upper;
  std::cout << ci.size() << " rows, " << inside << " inside the " << level << " interval; wrote " << file.string() << "\n";
  return 0;
}

int run_export_latent(const std::string& path, const std::string& split, const std::string& out) {
  const auto ck = load_checkpoint(path);
  const auto data = data_for(ck);
  const auto table = export_latent(ck, pick_split(data, split));
  const auto dir = prepare_dir(out);
  const auto file = dir / ("latent_" + split + ".csv");
  write_text(file.string(), latent_csv(table));
  std::cout << table.rows() << " x " << table.cols() << " written to " << file.string() << "\n";
  return 0;
}

std::vector<ModelKind> parse_models(const std::vector<std::string>& names) {
  std::vector<ModelKind> out;
  for (const auto& n : names) {
    try {
      out.push_back(parse_model_kind(n));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

int run_sweep(const Overrides& ov, std::vector<double> fractions, const std::vector<std::string>& model_names,
              std::vector<std::uint64_t> seeds, unsigned threads) {
  const auto c = ov.resolve();
  if (fractions.empty()) fractions = study_fractions();
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("--fractions: " + detail::format_double(f) + " is outside (0, 1]");
  }
  if (seeds.empty()) seeds = {c.seed};
  const auto models = parse_models(model_names);
  const auto dir = prepare_dir(c.output_dir);
  write_text((dir / "config.ini").string(), to_ini(c));
  const auto r = sweep(c, fractions, models, seeds, threads);
  write_text((dir / "table.csv").string(), sweep_table_csv(r));
  write_text((dir / "sweep_long.csv").string(), sweep_long_csv(r));
  write_text((dir / "sweep_terms.csv").string(), sweep_terms_csv(r));
  std::cout << sweep_table_csv(r) << "wrote " << dir.string() << "\n";
  return 0;
}

int run_inspect(const Overrides& ov) {
  const auto c = ov.resolve();
  const auto series = load_series(c.data);
  const auto d = prepare_data(c, series);
  std::cout << "dataset " << c.data.dataset << (c.data.path.empty() ? "" : " (" + c.data.path + ")") << "\n"
            << "records " << series.rows() << ", process variables " << series.process_count() << ", label column "
            << series.columns.at(series.label_column) << "\n"
            << "lags " << detail::join(c.data.lags) << ", input width " << d.input_width() << "\n";
  for (const auto& [name, p] : {std::pair<const char*, const Partition*>{"train", &d.train}, {"val", &d.val}, {"test", &d.test}}) {
    std::cout << name << ": " << p->size() << " rows from record " << p->first_time << ", " << p->labelled_count()
              << " labelled\n";
  }
  std::cout << "label mean " << d.standardizer.label_mean << ", scale " << d.standardizer.label_scale << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised variational autoencoder regression: training and evaluation"};
  app.require_subcommand(1);

  Overrides train_ov, sweep_ov, inspect_ov;
  auto* train_cmd = app.add_subcommand("train", "train one model and write checkpoint, metrics and CI trace");
  train_ov.attach(train_cmd, false);

  std::string ck_path, split = "test", out_dir = "out";
  std::optional<std::string> eval_out;
  std::size_t eval_batch = 0;
  double level = 0.95;
  auto* eval_cmd = app.add_subcommand("evaluate", "test RMSE of a checkpoint");
  eval_cmd->add_option("--checkpoint", ck_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split, "train | val | test");
  eval_cmd->add_option("--batch-size", eval_batch, "rows per evaluation batch (0 = all)");
  eval_cmd->add_option("--out", eval_out, "write evaluation.csv here");

  auto* predict_cmd = app.add_subcommand("predict", "prediction intervals, one row per record");
  predict_cmd->add_option("--checkpoint", ck_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--split", split, "train | val | test");
  predict_cmd->add_option("--level", level, "confidence level in (0, 1)");
  predict_cmd->add_option("--out", out_dir, "output directory");

  auto* latent_cmd = app.add_subcommand("export-latent", "latent means, predicted label sd and true label");
  latent_cmd->add_option("--checkpoint", ck_path, "checkpoint file")->required()->check(CLI::ExistingFile);
  latent_cmd->add_option("--split", split, "train | val | test");
  latent_cmd->add_option("--out", out_dir, "output directory");

  std::vector<double> fractions;
  std::vector<std::string> models{"ssvaer", "svaer", "fcnn"};
  std::vector<std::uint64_t> seeds;
  unsigned threads = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "test RMSE over label fractions, models and seeds");
  sweep_ov.attach(sweep_cmd, false);
  sweep_cmd->add_option("--fractions", fractions, "label fractions (default: the ten study fractions)")->delimiter(',');
  sweep_cmd->add_option("--models", models, "model kinds")->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "seeds (default: the config seed)")->delimiter(',');
  sweep_cmd->add_option("--threads", threads, "worker threads (0 = hardware)");

  auto* inspect_cmd = app.add_subcommand("inspect-data", "row counts, widths, splits and label counts");
  inspect_ov.attach(inspect_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return run_train(train_ov);
    if (*eval_cmd) return run_evaluate(ck_path, split, eval_batch, eval_out);
    if (*predict_cmd) return run_predict(ck_path, split, level, out_dir);
    if (*latent_cmd) return run_export_latent(ck_path, split, out_dir);
    if (*sweep_cmd) return run_sweep(sweep_ov, fractions, models, seeds, threads);
    if (*inspect_cmd) return run_inspect(inspect_ov);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
