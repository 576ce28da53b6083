// nesde command-line driver.
//
//   nesde generate --config spec.json --out-dir data
//   nesde train --config run.json --data-dir data --out-dir run
//   nesde evaluate --checkpoint run/checkpoint.json --data data/test.jsonl
//   nesde predict | inspect-spectrum | baseline ...
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nesde/datagen.hpp"
#include "nesde/dataset.hpp"
#include "nesde/harness.hpp"
#include "nesde/model.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;
using namespace nesde;

namespace {

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kNumericalExit = 4;

struct Globals {
  unsigned long long seed = 0;
  bool seed_given = false;
  std::string config;
  std::string out_dir = ".";
  int threads = 1;
};

Json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string(what) + " '" + path + "': " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Dataset load_dataset(const std::string& path) {
  Dataset d = read_jsonl(path);
  for (const auto& t : d) validate(t);
  if (d.empty()) throw DataError("dataset " + path + " is empty");
  return d;
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, _] : j.items())
    if (!allowed.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

EvalOptions eval_options(const Globals& g, const Json& cfg) {
  EvalOptions o;
  o.threads = g.threads;
  o.seed = g.seed;
  if (cfg.is_null()) return o;
  reject_unknown(cfg, {"resamples", "since_bin", "max_k"}, "eval config");
  try {
    o.resamples = cfg.value("resamples", o.resamples);
    o.since_bin = cfg.value("since_bin", o.since_bin);
    o.max_k = cfg.value("max_k", o.max_k);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
  if (o.resamples < 1) throw ConfigError("eval config field 'resamples': must be positive");
  if (!(o.since_bin > 0.0)) throw ConfigError("eval config field 'since_bin': must be positive");
  return o;
}

/// Run config: {"model": {...}, "train": {...}, "eval": {...}}.
struct RunConfig {
  Json model = Json::object();
  Json train = Json::object();
  Json eval;
};

RunConfig load_run_config(const Globals& g) {
  RunConfig rc;
  if (g.config.empty()) return rc;
  const Json j = read_json_file(g.config, "config");
  reject_unknown(j, {"model", "train", "eval"}, "config");
  if (j.contains("model")) rc.model = j.at("model");
  if (j.contains("train")) rc.train = j.at("train");
  if (j.contains("eval")) rc.eval = j.at("eval");
  return rc;
}

EvalWindow window_for(const std::string& protocol, double split_time) {
  if (protocol == "standard") return EvalWindow::standard();
  if (protocol == "forecast") return EvalWindow::forecast(split_time);
  if (protocol == "prior-only") return EvalWindow::prior_only(split_time);
  throw ConfigError("unknown protocol '" + protocol + "'");
}

void write_report(const fs::path& dir, const MetricReport& report, Manifest& manifest) {
  write_json_file(dir / "report.json", to_json(report));
  write_csv(dir / "metrics.csv", report.rows);
  manifest.outputs.push_back(dir / "report.json");
  manifest.outputs.push_back(dir / "metrics.csv");
}

std::vector<double> parse_times(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("--times: '" + item + "' is not a number");
    }
  }
  return out;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string generator;
  int n_trajectories = 0;
  bool with_ood = false;
  double train_fraction = 0.6;
  double val_fraction = 0.1;
};

int run_generate(const Globals& g, const GenerateArgs& a) {
  Json spec_json = Json::object();
  if (!g.config.empty()) spec_json = read_json_file(g.config, "benchmark spec");
  if (!a.generator.empty()) spec_json["generator"] = a.generator;
  if (a.n_trajectories > 0) spec_json["n_trajectories"] = a.n_trajectories;
  if (g.seed_given) spec_json["seed"] = g.seed;
  if (!spec_json.contains("generator")) spec_json["generator"] = "controlled-complex";
  BenchmarkSpec spec = benchmark_spec_from_json(spec_json);
  spec.validate();
  if (!(a.train_fraction > 0.0) || !(a.val_fraction >= 0.0) || a.train_fraction + a.val_fraction >= 1.0)
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val < 1");

  const fs::path dir = g.out_dir;
  Manifest manifest;
  manifest.command = "generate";
  manifest.seed = spec.seed;
  manifest.config = {{"spec", to_json(spec)}, {"train_fraction", a.train_fraction}, {"val_fraction", a.val_fraction},
                     {"with_ood", a.with_ood}};

  const DatasetSplits splits = split_dataset(make_benchmark(spec), a.train_fraction, a.val_fraction);
  const std::vector<std::pair<std::string, const Dataset*>> parts = {
      {"train.jsonl", &splits.train}, {"val.jsonl", &splits.val}, {"test.jsonl", &splits.test}};
  for (const auto& [name, d] : parts) {
    write_jsonl(dir / name, *d);
    manifest.outputs.push_back(dir / name);
  }
  Json info = {{"spec", to_json(spec)},
               {"counts", {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}}};
  if (a.with_ood) {
    if (spec.policy != "sd") throw ConfigError("--with-ood needs the sd policy in the base spec");
    BenchmarkSpec ood = spec;
    ood.policy = "ood";
    const DatasetSplits os = split_dataset(make_benchmark(ood), a.train_fraction, a.val_fraction);
    write_jsonl(dir / "test_ood.jsonl", os.test);
    manifest.outputs.push_back(dir / "test_ood.jsonl");
    info["counts"]["test_ood"] = os.test.size();
  }
  write_json_file(dir / "dataset.json", info);
  manifest.outputs.push_back(dir / "dataset.json");
  manifest.write(dir / "manifest.json");
  std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
            << " trajectories to " << dir.string() << '\n';
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data_dir;
  std::string train_data;
  std::string val_data;
  std::string test_data;
  std::string resume;
  std::string mode = "config";  // config | real | complex | auto
  int restarts = 1;
  long steps = 0;
  std::vector<int> sweep_sizes;
  double forecast_split = std::numeric_limits<double>::quiet_NaN();
  bool verbose = false;
};

std::vector<int> pair_counts_for(const std::string& mode, const NesdeConfig& c) {
  if (mode == "config") return {c.n_complex_pairs};
  if (mode == "real") return {0};
  if (mode == "complex") return {c.n / 2};
  if (mode == "auto") return mode_candidates(c.n);
  throw ConfigError("--mode must be config, real, complex or auto");
}

std::vector<MetricRow> log_rows(const Checkpoint& ck) {
  std::vector<MetricRow> rows;
  for (const auto& e : ck.log) {
    const std::string x = std::to_string(e.epoch);
    rows.push_back({"nll", "train", x, e.train_nll, e.train_nll, e.train_nll, static_cast<std::size_t>(e.step)});
    rows.push_back({"mse", "train", x, e.train_mse, e.train_mse, e.train_mse, static_cast<std::size_t>(e.step)});
    rows.push_back({"nll", "val", x, e.val_nll, e.val_nll, e.val_nll, static_cast<std::size_t>(e.step)});
    rows.push_back({"mse", "val", x, e.val_mse, e.val_mse, e.val_mse, static_cast<std::size_t>(e.step)});
  }
  return rows;
}

int run_train(const Globals& g, TrainArgs a) {
  const RunConfig rc = load_run_config(g);
  if (!a.data_dir.empty()) {
    if (a.train_data.empty()) a.train_data = (fs::path(a.data_dir) / "train.jsonl").string();
    if (a.val_data.empty()) a.val_data = (fs::path(a.data_dir) / "val.jsonl").string();
    if (a.test_data.empty() && !a.sweep_sizes.empty()) a.test_data = (fs::path(a.data_dir) / "test.jsonl").string();
  }
  if (a.train_data.empty()) throw ConfigError("train: give --data-dir or --train-data");
  if (a.restarts < 1) throw ConfigError("--restarts must be positive");

  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);

  // A resumed run keeps the architecture stored in its checkpoint.
  NesdeConfig mc = resume ? resume->best.config : model_config_from_json(rc.model);
  mc.validate();
  TrainConfig tc = (resume && rc.train == Json::object()) ? resume->train : train_config_from_json(rc.train);
  tc.threads = g.threads;
  tc.diagnostic_dir = g.out_dir;
  tc.verbose = a.verbose;
  if (g.seed_given || !resume) tc.seed = g.seed;

  const Dataset train_set = load_dataset(a.train_data);
  const Dataset val_set = a.val_data.empty() ? Dataset{} : load_dataset(a.val_data);
  if (a.steps > 0) tc.epochs = epochs_for_steps(a.steps, train_set.size(), tc.batch_size);

  const fs::path dir = g.out_dir;
  Manifest manifest;
  manifest.command = "train";
  manifest.seed = tc.seed;
  manifest.inputs = {a.train_data};
  if (!a.val_data.empty()) manifest.inputs.push_back(a.val_data);
  if (!a.resume.empty()) manifest.inputs.push_back(a.resume);
  manifest.config = {{"model", to_json(mc)}, {"train", to_json(tc)}, {"mode", a.mode}, {"restarts", a.restarts}};
  // Paths and thread counts do not change results.
  manifest.config["train"].erase("diagnostic_dir");
  manifest.config["train"].erase("threads");
  manifest.config["train"].erase("verbose");

  if (!a.sweep_sizes.empty()) {
    if (resume) throw ConfigError("train: --sweep-sizes cannot be combined with --resume");
    if (a.test_data.empty()) throw ConfigError("train: --sweep-sizes needs --test-data");
    const Dataset test_set = load_dataset(a.test_data);
    manifest.inputs.push_back(a.test_data);
    SweepOptions so;
    so.sizes = a.sweep_sizes;
    so.steps = a.steps > 0 ? a.steps : so.steps;
    so.restarts = a.restarts;
    so.pair_counts = pair_counts_for(a.mode, mc);
    so.forecast_split = a.forecast_split;
    manifest.config["sweep"] = {{"sizes", so.sizes}, {"steps", so.steps}, {"forecast_split", a.forecast_split}};
    const MetricReport report = train_size_sweep(mc, tc, so, tc.seed, train_set, val_set, test_set, eval_options(g, rc.eval));
    write_report(dir, report, manifest);
    manifest.write(dir / "manifest.json");
    for (const auto& r : report.rows)
      if (r.metric == "test_nll") std::cout << "size " << r.x << " test nll " << r.value << '\n';
    return 0;
  }

  Checkpoint ck;
  Json selection;
  if (resume) {
    if (tc.epochs <= resume->epoch)
      throw ConfigError("train: resumed checkpoint already ran " + std::to_string(resume->epoch) +
                        " epochs; raise train.epochs");
    ck = train(resume->last, train_set, val_set, tc, &*resume);
  } else {
    const SelectionResult sel = train_selected(mc, pair_counts_for(a.mode, mc), a.restarts, tc.seed, train_set, val_set, tc);
    ck = sel.best;
    selection = {{"complex_pairs", sel.complex_pairs}, {"init_seed", sel.init_seed}, {"candidates", sel.candidates}};
  }
  save_checkpoint(dir / "checkpoint.json", ck);
  write_csv(dir / "train_log.csv", log_rows(ck));
  manifest.outputs = {dir / "checkpoint.json", dir / "train_log.csv"};
  if (!selection.is_null()) {
    write_json_file(dir / "selection.json", selection);
    manifest.outputs.push_back(dir / "selection.json");
  }
  manifest.write(dir / "manifest.json");
  std::cout << "trained " << ck.epoch << " epochs (" << ck.step << " steps), best val nll " << ck.best_val_nll << '\n';
  return 0;
}

// ---------------------------------------------------------------- evaluate

/// Naive rows alongside a standard evaluation, with a `naive_` prefix.
MetricReport prefixed_naive(const Dataset& data, const EvalOptions& opts, const std::string& split) {
  MetricReport r = evaluate_naive(data, EvalWindow::standard(), split, opts);
  for (auto& row : r.rows) row.metric = "naive_" + row.metric;
  return r;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string ood_data;
  std::string predictions;
  std::string protocol = "standard";  // standard | ood | forecast
  double split_time = 4.0;
  std::string split = "test";
};

int run_evaluate(const Globals& g, const EvalArgs& a) {
  const RunConfig rc = load_run_config(g);
  const EvalOptions opts = eval_options(g, rc.eval);
  if (a.data.empty()) throw ConfigError("evaluate: --data is required");
  const Dataset data = load_dataset(a.data);
  Manifest manifest;
  manifest.command = "evaluate";
  manifest.seed = g.seed;
  manifest.config = {{"protocol", a.protocol}, {"split_time", a.split_time}, {"split", a.split},
                     {"eval", {{"resamples", opts.resamples}, {"since_bin", opts.since_bin}, {"max_k", opts.max_k}}}};
  manifest.inputs = {a.data};

  MetricReport report;
  if (!a.predictions.empty()) {
    if (a.protocol == "ood") throw ConfigError("evaluate: saved predictions support the standard and forecast protocols");
    manifest.inputs.push_back(a.predictions);
    report = metrics_from_predictions(data, read_predictions(a.predictions), window_for(a.protocol, a.split_time),
                                      a.split, opts);
  } else {
    if (a.checkpoint.empty()) throw ConfigError("evaluate: --checkpoint or --predictions is required");
    manifest.inputs.push_back(a.checkpoint);
    const NesdeModel model = load_checkpoint(a.checkpoint).best;
    if (a.protocol == "standard") {
      report = evaluate_model(model, data, EvalWindow::standard(), a.split, opts);
      report.append(prefixed_naive(data, opts, a.split));
    } else if (a.protocol == "ood") {
      if (a.ood_data.empty()) throw ConfigError("evaluate: the ood protocol needs --ood-data");
      manifest.inputs.push_back(a.ood_data);
      report = evaluate_ood(model, data, load_dataset(a.ood_data), opts);
    } else if (a.protocol == "forecast") {
      report = evaluate_forecast(model, data, a.split_time, opts);
    } else {
      throw ConfigError("unknown protocol '" + a.protocol + "'");
    }
  }
  write_report(g.out_dir, report, manifest);
  manifest.write(fs::path(g.out_dir) / "manifest.json");
  for (const auto& r : report.rows)
    if (r.x.empty()) std::cout << r.metric << " [" << r.split << "] " << r.value << " (" << r.ci_low << ", " << r.ci_high << ")\n";
  return 0;
}

// ----------------------------------------------------------------- predict

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string times;
  double query_dt = 0.0;
  std::string protocol = "standard";
  double split_time = 4.0;
};

int run_predict(const Globals& g, const PredictArgs& a) {
  if (a.checkpoint.empty() || a.data.empty()) throw ConfigError("predict: --checkpoint and --data are required");
  const NesdeModel model = load_checkpoint(a.checkpoint).best;
  const Dataset data = load_dataset(a.data);
  const EvalWindow w = window_for(a.protocol, a.split_time);
  Predictions preds;
  if (a.query_dt > 0.0 || !a.times.empty()) {
    const std::vector<double> fixed = parse_times(a.times);
    for (const auto& traj : data) {
      std::vector<double> q = fixed;
      if (a.query_dt > 0.0)
        for (double t = traj.t_start; t <= traj.horizon() + 1e-12; t += a.query_dt) q.push_back(t);
      std::sort(q.begin(), q.end());
      Predictions one = predict_observations(model, Dataset{traj}, w, q, 1);
      preds.push_back(std::move(one.front()));
    }
  } else {
    preds = predict_observations(model, data, w, {}, g.threads);
  }
  const fs::path dir = g.out_dir;
  write_predictions(dir / "predictions.jsonl", preds);
  Manifest manifest;
  manifest.command = "predict";
  manifest.seed = g.seed;
  manifest.config = {{"protocol", a.protocol}, {"split_time", a.split_time}, {"times", a.times}, {"query_dt", a.query_dt}};
  manifest.inputs = {a.data, a.checkpoint};
  manifest.outputs = {dir / "predictions.jsonl"};
  manifest.write(dir / "manifest.json");
  std::cout << "wrote predictions for " << preds.size() << " trajectories\n";
  return 0;
}

// -------------------------------------------------------- inspect-spectrum

int run_inspect(const Globals& g, const std::string& checkpoint, const std::string& data_path) {
  if (checkpoint.empty() || data_path.empty()) throw ConfigError("inspect-spectrum: --checkpoint and --data are required");
  const NesdeModel model = load_checkpoint(checkpoint).best;
  const Dataset data = load_dataset(data_path);
  const SpectrumSummary s = inspect_spectrum(model, data, g.threads);
  const fs::path dir = g.out_dir;
  write_json_file(dir / "spectrum.json", to_json(s));
  write_csv(dir / "spectrum.csv", spectrum_rows(s, "test"));
  Manifest manifest;
  manifest.command = "inspect-spectrum";
  manifest.seed = g.seed;
  manifest.inputs = {data_path, checkpoint};
  manifest.outputs = {dir / "spectrum.json", dir / "spectrum.csv"};
  manifest.write(dir / "manifest.json");
  std::cout << "class " << s.label << '\n';
  for (const auto& c : s.components)
    std::cout << c.kind << c.index << " re " << c.re_mean << " +- " << c.re_std << " im " << c.im_mean << " +- "
              << c.im_std << '\n';
  return 0;
}

// ---------------------------------------------------------------- baseline

int run_baseline(const Globals& g, const std::string& data_path, const std::string& protocol, double split_time,
                 const std::string& split) {
  if (data_path.empty()) throw ConfigError("baseline: --data is required");
  const RunConfig rc = load_run_config(g);
  const EvalOptions opts = eval_options(g, rc.eval);
  const Dataset data = load_dataset(data_path);
  const EvalWindow w = window_for(protocol, split_time);
  const Predictions preds = naive_predictions(data, w);
  const fs::path dir = g.out_dir;
  write_predictions(dir / "baseline_predictions.jsonl", preds);
  MetricReport report = metrics_from_predictions(data, preds, w, split, opts);
  Manifest manifest;
  manifest.command = "baseline";
  manifest.seed = g.seed;
  manifest.config = {{"baseline", "naive"}, {"protocol", protocol}, {"split_time", split_time}, {"split", split}};
  manifest.inputs = {data_path};
  manifest.outputs = {dir / "baseline_predictions.jsonl"};
  write_report(dir, report, manifest);
  manifest.write(dir / "manifest.json");
  for (const auto& r : report.rows)
    if (r.x.empty()) std::cout << "naive " << r.metric << " [" << r.split << "] " << r.value << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NESDE: neural eigen-SDE training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.fallthrough();

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic benchmark");
  gen->add_option("--generator", ga.generator, "Generator id (overrides the config)");
  gen->add_option("--n-trajectories", ga.n_trajectories, "Trajectory count (overrides the config)");
  gen->add_flag("--with-ood", ga.with_ood, "Also write the paired ood-policy test split");
  gen->add_option("--train-fraction", ga.train_fraction)->capture_default_str();
  gen->add_option("--val-fraction", ga.val_fraction)->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data-dir", ta.data_dir, "Directory with train/val/test.jsonl");
  tr->add_option("--train-data", ta.train_data);
  tr->add_option("--val-data", ta.val_data);
  tr->add_option("--test-data", ta.test_data, "Test split for --sweep-sizes");
  tr->add_option("--resume", ta.resume, "Continue from a checkpoint");
  tr->add_option("--mode", ta.mode, "config | real | complex | auto")->capture_default_str();
  tr->add_option("--restarts", ta.restarts, "Initializations per mode")->capture_default_str();
  tr->add_option("--steps", ta.steps, "Optimizer steps (sets epochs from the training size)");
  tr->add_option("--sweep-sizes", ta.sweep_sizes, "Train on nested prefixes of these sizes")->delimiter(',');
  tr->add_option("--forecast-split", ta.forecast_split, "Also score the t <= split forecast protocol in a sweep");
  tr->add_flag("--verbose", ta.verbose);

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint or saved predictions");
  ev->add_option("--checkpoint", ea.checkpoint);
  ev->add_option("--data", ea.data);
  ev->add_option("--ood-data", ea.ood_data);
  ev->add_option("--predictions", ea.predictions, "Score saved predictions instead of a model");
  ev->add_option("--protocol", ea.protocol, "standard | ood | forecast")->capture_default_str();
  ev->add_option("--split-time", ea.split_time)->capture_default_str();
  ev->add_option("--split", ea.split, "Split label in the report")->capture_default_str();

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Write per-observation and query predictions");
  pr->add_option("--checkpoint", pa.checkpoint);
  pr->add_option("--data", pa.data);
  pr->add_option("--times", pa.times, "Comma-separated query times");
  pr->add_option("--query-dt", pa.query_dt, "Regular query grid spacing");
  pr->add_option("--protocol", pa.protocol, "standard | forecast | prior-only")->capture_default_str();
  pr->add_option("--split-time", pa.split_time)->capture_default_str();

  std::string insp_ck;
  std::string insp_data;
  auto* in = app.add_subcommand("inspect-spectrum", "Summarize emitted eigenvalues");
  in->add_option("--checkpoint", insp_ck);
  in->add_option("--data", insp_data);

  std::string base_data;
  std::string base_protocol = "standard";
  double base_split_time = 4.0;
  std::string base_split = "test";
  auto* ba = app.add_subcommand("baseline", "Naive last-observation baseline");
  ba->add_option("--data", base_data);
  ba->add_option("--protocol", base_protocol, "standard | forecast")->capture_default_str();
  ba->add_option("--split-time", base_split_time)->capture_default_str();
  ba->add_option("--split", base_split)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*gen) return run_generate(g, ga);
    if (*tr) return run_train(g, ta);
    if (*ev) return run_evaluate(g, ea);
    if (*pr) return run_predict(g, pa);
    if (*in) return run_inspect(g, insp_ck, insp_data);
    if (*ba) return run_baseline(g, base_data, base_protocol, base_split_time, base_split);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
