#pragma once

// The NESDE model: a context-conditioned prior, a hypernetwork that re-emits
// the interval dynamics from the current belief, closed-form propagation
// between interval boundaries, and filtering at observation times.
//
// Parameters live in one flat vector laid out as
//   [hypernet g1 | prior net | raw control map B].
// g1 maps the context to the weights of the generator g2, and g2 maps the
// encoded belief to the dynamics head
//   [spectrum (n) | pre-basis (n*n) | Cholesky of Q (n(n+1)/2)].
// With a zero-dimensional context g1 and the prior reduce to learned biases.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "nesde/ad.hpp"
#include "nesde/dataset.hpp"
#include "nesde/filter.hpp"
#include "nesde/linalg.hpp"
#include "nesde/neural.hpp"
#include "nesde/solver.hpp"
#include "nesde/spectral.hpp"
#include "nesde/types.hpp"

namespace nesde {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr double kBoundaryTolerance = 1e-9;

struct NesdeConfig {
  int n = 2;
  int m = 1;
  int k = 1;
  int context_dim = 0;
  int n_complex_pairs = 0;
  double update_interval = 1.0;
  bool stability_constraint = true;
  std::vector<std::vector<bool>> control_mask;  // n x k, empty means unrestricted
  bool mask_control_on_observed = false;        // zero the first m rows of B
  std::vector<int> hypernet_hidden{16};
  std::vector<int> generator_hidden{};
  std::vector<int> prior_hidden{16};
  Activation activation = Activation::kTanh;
  bool full_sigma_input = false;
  bool restart_grid_on_observation = false;
  double v_condition_bound = 1e6;
  double v_epsilon = 1e-6;
  double r_floor = 1e-6;
  double init_gain = 0.1;

  int n_real() const { return n - 2 * n_complex_pairs; }
  bool control_allowed(int row, int col) const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const NesdeConfig& c);
NesdeConfig model_config_from_json(const nlohmann::json& j);

struct NesdeLayout {
  int belief_input_dim = 0;
  int head_dim = 0;
  int prior_head_dim = 0;
  MlpShape generator;
  MlpShape hypernet;
  MlpShape prior;
  std::size_t hypernet_offset = 0;
  std::size_t prior_offset = 0;
  std::size_t b_offset = 0;
  std::size_t total = 0;

  static NesdeLayout of(const NesdeConfig& c);
};

struct NesdeModel {
  NesdeConfig config;
  NesdeLayout layout;
  VectorXd params;

  static NesdeModel initialized(const NesdeConfig& config, unsigned long long seed);

  /// A model whose prior always returns `initial`, (alpha, R) of `dyn`, and
  /// whose hypernetwork constantly emits `dyn`.
  static NesdeModel from_fixed_dynamics(const NesdeConfig& config, const SpectralDynamics& dyn,
                                        const GaussianBelief& initial);

  MatrixXd control_map() const;
};

nlohmann::json to_json(const NesdeModel& model);
NesdeModel model_from_json(const nlohmann::json& j);

/// softplus^-1, saturating for non-positive arguments.
double inverse_softplus(double y);

template <class T>
struct BasicPriorOutput {
  BasicGaussianBelief<T> belief;
  Vec<T> alpha;
  Mat<T> R;
};
using PriorOutput = BasicPriorOutput<double>;

namespace detail {

template <class T>
Mat<T> lower_from_raw(std::span<const T> raw, int dim, double floor = 0.0) {
  Mat<T> l = Mat<T>::Zero(dim, dim);
  std::size_t p = 0;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= i; ++j, ++p) l(i, j) = i == j ? softplus(raw[p]) + T(floor) : raw[p];
  return l;
}

template <class T>
Vec<T> context_vector(const VectorXd& context) {
  return context.template cast<T>();
}

/// Everything that is fixed for one sequence: generator weights (g1 output),
/// the prior outputs and the control map.
template <class T>
struct SequenceState {
  std::vector<T> generator_weights;
  BasicPriorOutput<T> prior;
  Mat<T> B;
};

template <class T>
Mat<T> control_map(const NesdeModel& model, std::span<const T> params) {
  const auto& c = model.config;
  Mat<T> b = Mat<T>::Zero(c.n, c.k);
  const auto raw = params.subspan(model.layout.b_offset, static_cast<std::size_t>(c.n * c.k));
  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j < c.k; ++j)
      if (c.control_allowed(i, j)) b(i, j) = raw[static_cast<std::size_t>(i * c.k + j)];
  return b;
}

template <class T>
BasicPriorOutput<T> prior_outputs(const NesdeModel& model, std::span<const T> params, const VectorXd& context,
                                  double t0) {
  const auto& c = model.config;
  const auto& lay = model.layout;
  if (context.size() != c.context_dim)
    throw DimensionError("prior: context has " + std::to_string(context.size()) + " entries, expected " +
                         std::to_string(c.context_dim));
  const auto prior_params = params.subspan(lay.prior_offset, static_cast<std::size_t>(lay.prior.num_params()));
  const Vec<T> head = mlp_apply<T>(lay.prior, prior_params, context_vector<T>(context));
  const std::span<const T> h(head.data(), static_cast<std::size_t>(head.size()));
  const auto tri_n = static_cast<std::size_t>(c.n * (c.n + 1) / 2);
  std::size_t p = 0;
  BasicPriorOutput<T> out;
  out.belief.t = t0;
  out.belief.mu = Eigen::Map<const Vec<T>>(h.data() + p, c.n);
  p += static_cast<std::size_t>(c.n);
  const Mat<T> l0 = lower_from_raw<T>(h.subspan(p, tri_n), c.n);
  p += tri_n;
  out.belief.sigma = l0 * l0.transpose();
  out.alpha = Eigen::Map<const Vec<T>>(h.data() + p, c.n);
  p += static_cast<std::size_t>(c.n);
  const Mat<T> lr = lower_from_raw<T>(h.subspan(p, static_cast<std::size_t>(c.m * (c.m + 1) / 2)), c.m);
  out.R = lr * lr.transpose();
  for (int i = 0; i < c.m; ++i) out.R(i, i) += T(c.r_floor);
  return out;
}

template <class T>
std::vector<T> generator_weights(const NesdeModel& model, std::span<const T> params, const VectorXd& context) {
  const auto& lay = model.layout;
  if (context.size() != model.config.context_dim) throw DimensionError("hypernet: context dimension mismatch");
  const auto hp = params.subspan(lay.hypernet_offset, static_cast<std::size_t>(lay.hypernet.num_params()));
  const Vec<T> w = mlp_apply<T>(lay.hypernet, hp, context_vector<T>(context));
  return std::vector<T>(w.data(), w.data() + w.size());
}

template <class T>
SequenceState<T> sequence_state(const NesdeModel& model, std::span<const T> params, const VectorXd& context,
                                double t0) {
  SequenceState<T> s;
  s.generator_weights = generator_weights<T>(model, params, context);
  s.prior = prior_outputs<T>(model, params, context, t0);
  s.B = control_map<T>(model, params);
  return s;
}

/// Hypernet input: (asinh mu, log1p diag sigma), or with full_sigma_input
/// (asinh mu, log1p diag sigma, asinh of the strictly lower triangle). The
/// elementwise squashing keeps the input finite when a poor fit lets the
/// belief grow.
template <class T>
Vec<T> encode_belief(const NesdeConfig& c, const BasicGaussianBelief<T>& belief) {
  using std::log1p;
  Vec<T> x(c.full_sigma_input ? c.n + c.n * (c.n + 1) / 2 : 2 * c.n);
  for (int i = 0; i < c.n; ++i) x(i) = asinh_of(belief.mu(i));
  Eigen::Index p = c.n;
  for (int i = 0; i < c.n; ++i) {
    const T& var = belief.sigma(i, i);
    x(p++) = value_of(var) > 0.0 ? T(log1p(var)) : T(0.0);
  }
  if (c.full_sigma_input)
    for (int i = 0; i < c.n; ++i)
      for (int j = 0; j < i; ++j) x(p++) = asinh_of(belief.sigma(i, j));
  return x;
}

/// Maps a dynamics head to SpectralDynamics. Entry order: complex pairs first
/// (raw a, raw b), then real rates.
template <class T>
BasicSpectralDynamics<T> decode_head(const NesdeConfig& c, const Vec<T>& head, const SequenceState<T>& seq) {
  const int n = c.n;
  BasicSpectralDynamics<T> dyn;
  int p = 0;
  for (int j = 0; j < c.n_complex_pairs; ++j, p += 2) {
    const T a = c.stability_constraint ? T(-softplus(head(p))) : head(p);
    dyn.spectrum.entries.push_back(SpectrumEntry<T>::complex_pair(a, softplus(head(p + 1))));
  }
  for (int j = 0; j < c.n_real(); ++j, ++p) {
    const T r = c.stability_constraint ? T(-softplus(head(p))) : head(p);
    dyn.spectrum.entries.push_back(SpectrumEntry<T>::real(r));
  }
  Mat<T> pre(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pre(i, j) = head(p + i * n + j) + (i == j ? T(1.0) : T(0.0));
  p += n * n;
  // The pre-basis is rescaled to unit max-entry first (normalization is
  // scale-invariant). Ill-conditioned bases get eps * I added, with eps
  // growing tenfold until the normalized basis is acceptable.
  const double scale = linalg::values(pre).cwiseAbs().maxCoeff();
  if (!std::isfinite(scale)) throw NumericalError("hypernet: non-finite basis head");
  pre /= T(std::max(scale, 1e-300));
  double eps = c.v_epsilon;
  Mat<T> v = normalize_basis_columns<T>(dyn.spectrum, pre);
  for (int attempt = 0; !(linalg::condition_number(linalg::values(v)) <= c.v_condition_bound); ++attempt) {
    if (attempt == 16) throw NumericalError("hypernet: basis stays ill-conditioned after regularization");
    Mat<T> reg = pre;
    for (int i = 0; i < n; ++i) reg(i, i) += T(eps);
    v = normalize_basis_columns<T>(dyn.spectrum, reg);
    eps *= 10.0;
  }
  dyn.basis.V = v;
  const std::span<const T> hs(head.data(), static_cast<std::size_t>(head.size()));
  const Mat<T> lq = lower_from_raw<T>(hs.subspan(static_cast<std::size_t>(p), static_cast<std::size_t>(n * (n + 1) / 2)), n);
  dyn.Q = lq * lq.transpose();
  dyn.B = seq.B;
  dyn.alpha = seq.prior.alpha;
  dyn.R = seq.prior.R;
  return dyn;
}

template <class T>
BasicSpectralDynamics<T> hypernet_step(const NesdeModel& model, const SequenceState<T>& seq,
                                       const BasicGaussianBelief<T>& belief) {
  const std::span<const T> w(seq.generator_weights);
  const Vec<T> head = mlp_apply<T>(model.layout.generator, w, encode_belief<T>(model.config, belief));
  return decode_head<T>(model.config, head, seq);
}

/// Sum of squares of the generator's weight-matrix entries.
template <class T>
T generator_weight_penalty(const NesdeModel& model, const std::vector<T>& weights) {
  const auto& shape = model.layout.generator;
  T acc(0.0);
  std::size_t offset = 0;
  for (int l = 0; l < shape.layers(); ++l) {
    const auto in = static_cast<std::size_t>(shape.sizes[static_cast<std::size_t>(l)]);
    const auto out = static_cast<std::size_t>(shape.sizes[static_cast<std::size_t>(l + 1)]);
    for (std::size_t i = 0; i < in * out; ++i) acc += weights[offset + i] * weights[offset + i];
    offset += in * out + out;
  }
  return acc;
}

/// Sorted, deduplicated interval boundaries in (t0, t_end].
std::vector<double> interval_boundaries(const NesdeConfig& c, double t0, double t_end,
                                        const std::vector<double>& obs_times);

template <class T>
struct SequenceCallbacks {
  /// Pre-filter prediction at observation i.
  std::function<void(std::size_t, const BasicPredictive<T>&)> on_observation;
  /// Prediction at query q.
  std::function<void(std::size_t, const BasicPredictive<T>&, int interval)> on_query;
  std::function<void(double t0, double t1, const BasicSpectralDynamics<T>&)> on_interval;
};

/// Runs the sequence loop. `filter_obs` selects which observations are
/// filtered (null: all). Every observation still gets a prediction.
template <class T>
void run_core(const NesdeModel& model, std::span<const T> params, const Trajectory& traj,
              const std::vector<double>& query_times, const std::vector<bool>* filter_obs,
              const SequenceCallbacks<T>& cb) {
  const auto& c = model.config;
  if (traj.control.dim() != 0 && traj.control.dim() != c.k) throw DataError("run_sequence: control dimension mismatch");
  for (const auto& o : traj.obs)
    if (o.y_hat.size() != c.m) throw DataError("run_sequence: observation dimension mismatch");
  for (std::size_t i = 1; i < traj.obs.size(); ++i)
    if (traj.obs[i].t < traj.obs[i - 1].t) throw DataError("run_sequence: observations are not sorted");
  for (std::size_t i = 1; i < query_times.size(); ++i)
    if (query_times[i] < query_times[i - 1]) throw DataError("run_sequence: query times are not sorted");
  const double t0 = traj.t_start;
  if (!query_times.empty() && query_times.front() < t0) throw DataError("run_sequence: query before sequence start");
  if (!traj.obs.empty() && traj.obs.front().t < t0) throw DataError("run_sequence: observation before sequence start");

  const SequenceState<T> seq = sequence_state<T>(model, params, traj.context, t0);
  double t_end = t0;
  if (!traj.obs.empty()) t_end = std::max(t_end, traj.obs.back().t);
  if (!query_times.empty()) t_end = std::max(t_end, query_times.back());

  std::vector<double> obs_times;
  for (std::size_t i = 0; i < traj.obs.size(); ++i)
    if (filter_obs == nullptr || (*filter_obs)[i]) obs_times.push_back(traj.obs[i].t);
  const std::vector<double> bounds = interval_boundaries(c, t0, t_end, obs_times);

  BasicGaussianBelief<T> belief = seq.prior.belief;
  const ControlSignal& u = traj.control;
  std::size_t next_obs = 0;
  std::size_t next_query = 0;

  auto predict = [&](const BasicGaussianBelief<T>& b) {
    return predictive_observation<T>(b, seq.prior.alpha, seq.prior.R);
  };
  // Predicts every observation at time t from the pre-filter belief, then
  // conditions on the ones selected for filtering.
  auto observe_at = [&](double t, const BasicGaussianBelief<T>& at_t) {
    BasicGaussianBelief<T> cur = at_t;
    while (next_obs < traj.obs.size() && traj.obs[next_obs].t <= t + kBoundaryTolerance) {
      if (cb.on_observation) cb.on_observation(next_obs, predict(at_t));
      if (filter_obs == nullptr || (*filter_obs)[next_obs])
        cur = condition<T>(cur, traj.obs[next_obs], seq.prior.alpha, seq.prior.R);
      ++next_obs;
    }
    return cur;
  };
  // Queries up to t are answered from the interval-start belief.
  auto answer_queries = [&](double t, const EigenSdeSolver<T>* solver, int interval) {
    while (next_query < query_times.size() && query_times[next_query] <= t + kBoundaryTolerance) {
      const double tq = std::max(query_times[next_query], belief.t);
      if (cb.on_query) {
        if (solver != nullptr)
          cb.on_query(next_query, predict(solver->propagate(belief, u, tq)), interval);
        else
          cb.on_query(next_query, predict(belief), interval);
      }
      ++next_query;
    }
  };

  answer_queries(t0, nullptr, -1);
  belief = observe_at(t0, belief);

  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const double t1 = bounds[i];
    const BasicSpectralDynamics<T> dyn = hypernet_step<T>(model, seq, belief);
    if (cb.on_interval) cb.on_interval(belief.t, t1, dyn);
    const EigenSdeSolver<T> solver(dyn);
    answer_queries(t1, &solver, static_cast<int>(i));
    // Observations inside the interval that are not filtered only get a prediction.
    while (next_obs < traj.obs.size() && traj.obs[next_obs].t < t1 - kBoundaryTolerance) {
      if (cb.on_observation)
        cb.on_observation(next_obs, predict(solver.propagate(belief, u, std::max(belief.t, traj.obs[next_obs].t))));
      ++next_obs;
    }
    belief = observe_at(t1, solver.propagate(belief, u, t1));
  }
}

}  // namespace detail

PriorOutput prior(const NesdeModel& model, const VectorXd& context);

/// Dynamics emitted for `belief` under `context` (uses the sequence-level prior
/// for alpha and R).
SpectralDynamics hypernet_step(const NesdeModel& model, const VectorXd& context, const GaussianBelief& belief);

struct QueryPrediction {
  double t = 0.0;
  VectorXd mean;
  MatrixXd cov;
  int interval = -1;
};

struct IntervalRecord {
  double t_start = 0.0;
  double t_end = 0.0;
  SpectralDynamics dynamics;
};

struct SequencePrediction {
  std::vector<QueryPrediction> queries;       // one per query time
  std::vector<QueryPrediction> observations;  // pre-filter prediction per observation
  std::vector<IntervalRecord> intervals;
};

struct RunOptions {
  const std::vector<bool>* filter_obs = nullptr;
  bool record_intervals = false;
};

SequencePrediction run_sequence(const NesdeModel& model, const Trajectory& traj, const std::vector<double>& query_times,
                                const RunOptions& options = {});

/// Loss of one sequence: summed NLL over the observation events, and its
/// gradient with respect to model.params.
struct SequenceLoss {
  double nll_sum = 0.0;
  std::size_t events = 0;
  double sq_err_sum = 0.0;  // squared error at events with >= 1 earlier filtered observation
  std::size_t sq_err_count = 0;
  VectorXd grad;
};

/// `weight_decay` adds weight_decay * events * |generator weights|^2 to the
/// differentiated objective (not to nll_sum).
SequenceLoss sequence_loss(const NesdeModel& model, const Trajectory& traj, const std::vector<bool>* filter_obs,
                           bool with_gradient, ad::Tape* tape = nullptr, double weight_decay = 0.0);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double obs_keep_prob = 0.8;
  int min_obs = 2;
  double grad_clip = 10.0;  // global-norm clip, 0 disables
  double generator_weight_decay = 0.0;  // L2 on the generator weight matrices (not biases)
  int patience = 0;         // epochs without validation improvement before stopping, 0 disables
  unsigned long long seed = 0;
  int threads = 1;
  std::string diagnostic_dir;  // NaN dumps, defaults to the working directory
  bool verbose = false;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochMetrics {
  int epoch = 0;
  long step = 0;
  double train_nll = 0.0;
  double train_mse = 0.0;
  double val_nll = 0.0;
  double val_mse = 0.0;
};

struct Checkpoint {
  NesdeModel best;  // parameters with the best validation NLL
  NesdeModel last;
  AdamState adam;
  long step = 0;
  int epoch = 0;
  double best_val_nll = std::numeric_limits<double>::infinity();
  TrainConfig train;
  std::vector<EpochMetrics> log;
};

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Keeps each observation with probability `keep`, at least `min_obs`
/// (or all, when fewer exist).
std::vector<bool> subsample_observations(std::size_t count, double keep, int min_obs, std::mt19937_64& rng);

struct DatasetScore {
  double nll = 0.0;  // mean over observation events
  double mse = 0.0;  // mean over events with >= 1 earlier observation
  std::size_t events = 0;
  std::size_t mse_events = 0;
};

DatasetScore score(const NesdeModel& model, const Dataset& data, int threads = 1);

/// Adam on the mean NLL per observation event. Resumes from `resume` when
/// given (parameters, optimizer state, step counter and log carry over).
Checkpoint train(const NesdeModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                 const Checkpoint* resume = nullptr);

}  // namespace nesde
