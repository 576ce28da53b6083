#pragma once

// Evaluation protocols, baselines, metric tables and run manifests.
//
// Metrics are computed from stored per-observation predictions, so a saved
// prediction file can be re-scored without the model. Every curve point
// carries a trajectory-level bootstrap interval.

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "nesde/dataset.hpp"
#include "nesde/model.hpp"

namespace nesde {

/// Which observations are conditioned on and which are scored.
struct EvalWindow {
  double filter_until = std::numeric_limits<double>::infinity();  // filter obs with t <= this
  double target_after = -std::numeric_limits<double>::infinity();  // score obs with t > this

  static EvalWindow standard() { return {}; }
  /// Condition on t <= split, score t > split.
  static EvalWindow forecast(double split) { return {split, split}; }
  /// Score t > split without conditioning on anything.
  static EvalWindow prior_only(double split) { return {-std::numeric_limits<double>::infinity(), split}; }

  bool filters(const Observation& o) const { return o.t <= filter_until; }
  bool targets(const Observation& o) const { return o.t > target_after; }
};

/// Pre-filter prediction of one observation. `mean` entries are NaN where the
/// predictor has nothing to offer; `cov` is empty for point predictors.
struct ObservationPrediction {
  double t = 0.0;
  VectorXd mean;
  MatrixXd cov;
  bool filtered = false;
};

struct TrajectoryPredictions {
  long id = 0;
  std::vector<ObservationPrediction> observations;
  std::vector<QueryPrediction> queries;
};

using Predictions = std::vector<TrajectoryPredictions>;

nlohmann::json to_json(const TrajectoryPredictions& p);
TrajectoryPredictions trajectory_predictions_from_json(const nlohmann::json& j);
void write_predictions(const std::filesystem::path& path, const Predictions& p);
Predictions read_predictions(const std::filesystem::path& path);

Predictions predict_observations(const NesdeModel& model, const Dataset& data, const EvalWindow& window,
                                 const std::vector<double>& query_times = {}, int threads = 1);

/// Last-observation predictor: each coordinate repeats its most recent
/// filtered value; coordinates never seen before are NaN (missing).
Predictions naive_predictions(const Dataset& data, const EvalWindow& window);

/// One scored observation.
struct EventRecord {
  int k = 0;  // filtered observations strictly before this one
  double t = 0.0;
  double since_last = std::numeric_limits<double>::quiet_NaN();  // time since the last filtered observation
  double sq_err = std::numeric_limits<double>::quiet_NaN();      // mean over observed coordinates
  double nll = std::numeric_limits<double>::quiet_NaN();
};

std::vector<std::vector<EventRecord>> score_events(const Dataset& data, const Predictions& preds, const EvalWindow& window);

/// Value with a 95% percentile interval.
struct Estimate {
  double value = 0.0;
  double low = 0.0;
  double high = 0.0;
  std::size_t n = 0;
};

/// Ratio of sums over trajectories (sum_i num_i / sum_i den_i) with a
/// seeded trajectory-level bootstrap.
class Bootstrap {
 public:
  Bootstrap(std::size_t trajectories, int resamples, unsigned long long seed);
  Estimate ratio(const std::vector<double>& num, const std::vector<double>& den) const;
  /// Ratio of two ratio statistics on paired trajectory sets.
  Estimate ratio_of_ratios(const std::vector<double>& num_a, const std::vector<double>& den_a,
                           const std::vector<double>& num_b, const std::vector<double>& den_b) const;
  std::size_t trajectories() const { return n_; }

 private:
  std::size_t n_;
  std::vector<std::vector<std::uint32_t>> draws_;
};

struct MetricRow {
  std::string metric;
  std::string split;
  std::string x;  // empty for scalar metrics
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  nlohmann::json info = nlohmann::json::object();

  /// First row matching (metric, split, x); throws std::out_of_range.
  const MetricRow& at(const std::string& metric, const std::string& split, const std::string& x = "") const;
  void append(const MetricReport& other);
};

nlohmann::json to_json(const MetricReport& r);
std::string to_csv(const std::vector<MetricRow>& rows);
void write_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct EvalOptions {
  int threads = 1;
  int resamples = 1000;
  unsigned long long seed = 0;
  double since_bin = 0.5;  // bin width of the time-since-last-observation curve
  int max_k = 30;          // per-k curve stops here
};

/// Scalar mse (k >= 1), nll, and the per-k and time-since-last curves.
MetricReport metrics_from_predictions(const Dataset& data, const Predictions& preds, const EvalWindow& window,
                                      const std::string& split, const EvalOptions& opts);

MetricReport evaluate_model(const NesdeModel& model, const Dataset& data, const EvalWindow& window,
                            const std::string& split, const EvalOptions& opts);
MetricReport evaluate_naive(const Dataset& data, const EvalWindow& window, const std::string& split,
                            const EvalOptions& opts);

/// Paired sd/ood rows plus `ood_ratio` (ood mse over sd mse). The two sets
/// must hold the same number of trajectories in paired order.
MetricReport evaluate_ood(const NesdeModel& model, const Dataset& sd, const Dataset& ood, const EvalOptions& opts);

/// Forecast after conditioning on t <= split (`protocol_*` rows) against the
/// context prior alone (`prior_only_*` rows) and the naive baseline.
MetricReport evaluate_forecast(const NesdeModel& model, const Dataset& data, double split, const EvalOptions& opts);

/// Emitted eigenvalue statistics, one component per spectrum entry, pooled
/// over every interval of every trajectory.
struct SpectrumComponent {
  std::string kind;  // "real" | "pair"
  int index = 0;
  double re_mean = 0.0;
  double re_std = 0.0;
  double im_mean = 0.0;
  double im_std = 0.0;
  std::size_t count = 0;
};

struct SpectrumSummary {
  std::vector<SpectrumComponent> components;
  std::string label;  // "real" | "complex" | "imaginary"
  std::vector<nlohmann::json> per_trajectory;  // {id, entries: mean per component}
};

/// Class rule: "real" without pairs or with mean |im| < 0.05; otherwise
/// "imaginary" when |mean re| < 0.1 |mean im| over the pairs; else "complex".
std::string eigen_class(const std::vector<SpectrumComponent>& components);
SpectrumSummary inspect_spectrum(const NesdeModel& model, const Dataset& data, int threads = 1);
nlohmann::json to_json(const SpectrumSummary& s);
std::vector<MetricRow> spectrum_rows(const SpectrumSummary& s, const std::string& split);

/// Epoch count giving at least `steps` optimizer updates on `train_size`
/// trajectories.
int epochs_for_steps(long steps, std::size_t train_size, int batch_size);

/// Trains once per candidate (initial seed, complex-pair count) and keeps the
/// run with the lowest validation NLL.
struct SelectionResult {
  Checkpoint best;
  int complex_pairs = 0;
  unsigned long long init_seed = 0;
  std::vector<nlohmann::json> candidates;  // {complex_pairs, init_seed, best_val_nll}
};

SelectionResult train_selected(const NesdeConfig& config, const std::vector<int>& pair_counts, int restarts,
                               unsigned long long seed, const Dataset& train_set, const Dataset& val_set,
                               const TrainConfig& cfg);

/// Complex-pair counts worth trying: all-real and maximal pairing.
std::vector<int> mode_candidates(int n);

struct SweepOptions {
  std::vector<int> sizes{50, 100, 200, 400};
  long steps = 2000;  // optimizer updates per run, independent of size
  int restarts = 1;
  std::vector<int> pair_counts{0};
  double forecast_split = std::numeric_limits<double>::quiet_NaN();  // adds forecast rows when set
};

/// Trains on nested prefixes of `train_set` and scores each run on `test_set`
/// (`test_nll` / `test_mse` rows, x = size).
MetricReport train_size_sweep(const NesdeConfig& config, const TrainConfig& cfg, const SweepOptions& sweep,
                              unsigned long long seed, const Dataset& train_set, const Dataset& val_set,
                              const Dataset& test_set, const EvalOptions& opts);

/// Hex SHA-256 of bytes or a file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Reproduction record of a CLI run. Contains no timestamps or host
/// information, so reruns produce identical bytes.
struct Manifest {
  std::string command;
  unsigned long long seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

nlohmann::json build_versions();

}  // namespace nesde
