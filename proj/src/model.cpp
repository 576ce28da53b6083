#include "nesde/model.hpp"
#include "nesde/parallel.hpp"

#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

namespace nesde {

using Json = nlohmann::json;

namespace {

void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class V>
V get_field(const Json& j, const char* key, const V& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    if constexpr (std::is_same_v<V, double>) {
      return parse_exact(j.at(key));
    } else {
      return j.at(key).get<V>();
    }
  } catch (const std::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

Json layer_sizes_json(const std::vector<int>& v) { return Json(v); }

/// Lower-triangular L with L L^T = a for a PSD matrix; columns with a
/// vanishing pivot are set to zero.
MatrixXd exact_lower(const MatrixXd& a, const std::string& what) {
  const Eigen::Index n = a.rows();
  const double tol = 1e-14 * std::max(1.0, a.cwiseAbs().maxCoeff());
  MatrixXd l = MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (d < -tol) throw NumericalError(what + " is not positive semi-definite");
    if (d <= tol) continue;
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  return l;
}

void write_lower_raw(const MatrixXd& l, double* out) {
  std::size_t p = 0;
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++p) out[p] = i == j ? inverse_softplus(l(i, i)) : l(i, j);
}

double* final_bias(const MlpShape& shape, VectorXd& params, std::size_t offset) {
  return params.data() + offset + static_cast<std::size_t>(shape.num_params() - shape.output_dim());
}

}  // namespace

double inverse_softplus(double y) {
  if (!(y > 0.0)) return -50.0;
  if (y > 30.0) return y;
  return std::max(-50.0, std::log(std::expm1(y)));
}

bool NesdeConfig::control_allowed(int row, int col) const {
  if (mask_control_on_observed && row < m) return false;
  if (control_mask.empty()) return true;
  return control_mask[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
}

void NesdeConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model config field '" + field + "': " + why);
  };
  if (n < 1) fail("n", "must be >= 1");
  if (m < 1 || m > n) fail("m", "must satisfy 1 <= m <= n");
  if (k < 0) fail("k", "must be >= 0");
  if (context_dim < 0) fail("context_dim", "must be >= 0");
  if (n_complex_pairs < 0 || 2 * n_complex_pairs > n) fail("n_complex_pairs", "must satisfy 0 <= 2*pairs <= n");
  if (!(update_interval > 0.0)) fail("update_interval", "must be positive");
  if (!control_mask.empty()) {
    if (static_cast<int>(control_mask.size()) != n) fail("control_mask", "must have n rows");
    for (const auto& row : control_mask)
      if (static_cast<int>(row.size()) != k) fail("control_mask", "must have k columns");
  }
  for (const auto* hidden : {&hypernet_hidden, &generator_hidden, &prior_hidden})
    for (int h : *hidden)
      if (h < 1) fail("hidden layer sizes", "must be positive");
  if (!(v_condition_bound > 1.0)) fail("v_condition_bound", "must exceed 1");
  if (!(v_epsilon > 0.0)) fail("v_epsilon", "must be positive");
  if (!(r_floor >= 0.0)) fail("r_floor", "must be non-negative");
  if (!(init_gain >= 0.0)) fail("init_gain", "must be non-negative");
}

Json to_json(const NesdeConfig& c) {
  Json mask = Json::array();
  for (const auto& row : c.control_mask) mask.push_back(Json(row));
  return {{"n", c.n},
          {"m", c.m},
          {"k", c.k},
          {"context_dim", c.context_dim},
          {"n_complex_pairs", c.n_complex_pairs},
          {"update_interval", format_exact(c.update_interval)},
          {"stability_constraint", c.stability_constraint},
          {"control_mask", mask},
          {"mask_control_on_observed", c.mask_control_on_observed},
          {"hypernet_hidden", layer_sizes_json(c.hypernet_hidden)},
          {"generator_hidden", layer_sizes_json(c.generator_hidden)},
          {"prior_hidden", layer_sizes_json(c.prior_hidden)},
          {"activation", to_string(c.activation)},
          {"full_sigma_input", c.full_sigma_input},
          {"restart_grid_on_observation", c.restart_grid_on_observation},
          {"v_condition_bound", format_exact(c.v_condition_bound)},
          {"v_epsilon", format_exact(c.v_epsilon)},
          {"r_floor", format_exact(c.r_floor)},
          {"init_gain", format_exact(c.init_gain)}};
}

NesdeConfig model_config_from_json(const Json& j) {
  const std::string where = "model config";
  reject_unknown_keys(j,
                      {"n", "m", "k", "context_dim", "n_complex_pairs", "update_interval", "stability_constraint",
                       "control_mask", "mask_control_on_observed", "hypernet_hidden", "generator_hidden",
                       "prior_hidden", "activation", "full_sigma_input", "restart_grid_on_observation",
                       "v_condition_bound", "v_epsilon", "r_floor", "init_gain"},
                      where);
  NesdeConfig c;
  c.n = get_field(j, "n", c.n, where);
  c.m = get_field(j, "m", c.m, where);
  c.k = get_field(j, "k", c.k, where);
  c.context_dim = get_field(j, "context_dim", c.context_dim, where);
  c.n_complex_pairs = get_field(j, "n_complex_pairs", c.n_complex_pairs, where);
  c.update_interval = get_field(j, "update_interval", c.update_interval, where);
  c.stability_constraint = get_field(j, "stability_constraint", c.stability_constraint, where);
  c.control_mask = get_field(j, "control_mask", c.control_mask, where);
  c.mask_control_on_observed = get_field(j, "mask_control_on_observed", c.mask_control_on_observed, where);
  c.hypernet_hidden = get_field(j, "hypernet_hidden", c.hypernet_hidden, where);
  c.generator_hidden = get_field(j, "generator_hidden", c.generator_hidden, where);
  c.prior_hidden = get_field(j, "prior_hidden", c.prior_hidden, where);
  if (j.contains("activation")) c.activation = activation_from_string(get_field<std::string>(j, "activation", "", where));
  c.full_sigma_input = get_field(j, "full_sigma_input", c.full_sigma_input, where);
  c.restart_grid_on_observation = get_field(j, "restart_grid_on_observation", c.restart_grid_on_observation, where);
  c.v_condition_bound = get_field(j, "v_condition_bound", c.v_condition_bound, where);
  c.v_epsilon = get_field(j, "v_epsilon", c.v_epsilon, where);
  c.r_floor = get_field(j, "r_floor", c.r_floor, where);
  c.init_gain = get_field(j, "init_gain", c.init_gain, where);
  c.validate();
  return c;
}

NesdeLayout NesdeLayout::of(const NesdeConfig& c) {
  NesdeLayout l;
  const int tri_n = c.n * (c.n + 1) / 2;
  l.belief_input_dim = c.full_sigma_input ? c.n + tri_n : 2 * c.n;
  l.head_dim = c.n + c.n * c.n + tri_n;
  l.prior_head_dim = c.n + tri_n + c.n + c.m * (c.m + 1) / 2;

  l.generator.activation = c.activation;
  l.generator.sizes.push_back(l.belief_input_dim);
  l.generator.sizes.insert(l.generator.sizes.end(), c.generator_hidden.begin(), c.generator_hidden.end());
  l.generator.sizes.push_back(l.head_dim);

  l.hypernet.activation = c.activation;
  l.hypernet.sizes.push_back(c.context_dim);
  if (c.context_dim > 0)
    l.hypernet.sizes.insert(l.hypernet.sizes.end(), c.hypernet_hidden.begin(), c.hypernet_hidden.end());
  l.hypernet.sizes.push_back(l.generator.num_params());

  l.prior.activation = c.activation;
  l.prior.sizes.push_back(c.context_dim);
  if (c.context_dim > 0) l.prior.sizes.insert(l.prior.sizes.end(), c.prior_hidden.begin(), c.prior_hidden.end());
  l.prior.sizes.push_back(l.prior_head_dim);

  l.hypernet_offset = 0;
  l.prior_offset = static_cast<std::size_t>(l.hypernet.num_params());
  l.b_offset = l.prior_offset + static_cast<std::size_t>(l.prior.num_params());
  l.total = l.b_offset + static_cast<std::size_t>(c.n * c.k);
  return l;
}

NesdeModel NesdeModel::initialized(const NesdeConfig& config, unsigned long long seed) {
  config.validate();
  NesdeModel model;
  model.config = config;
  model.layout = NesdeLayout::of(config);
  model.params = VectorXd::Zero(static_cast<Eigen::Index>(model.layout.total));
  const auto& c = config;
  const auto& lay = model.layout;
  std::mt19937_64 rng(seed);

  // Generator weights with the dynamics head bias at its initial value.
  Mlp g2 = Mlp::initialized(lay.generator, rng, c.init_gain);
  double* head = final_bias(lay.generator, g2.params, 0);
  int p = 0;
  for (int j = 0; j < c.n_complex_pairs; ++j, p += 2) {
    head[p] = c.stability_constraint ? inverse_softplus(0.3) : -0.3;
    head[p + 1] = inverse_softplus(1.0 + j);
  }
  for (int i = 0; i < c.n_real(); ++i, ++p) {
    const double rate = 0.25 * std::pow(2.0, i);
    head[p] = c.stability_constraint ? inverse_softplus(rate) : -rate;
  }
  p += c.n * c.n;  // pre-basis starts at the identity
  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j <= i; ++j, ++p) head[p] = i == j ? inverse_softplus(0.3) : 0.0;

  Mlp g1 = Mlp::initialized(lay.hypernet, rng, c.init_gain);
  std::copy(g2.params.data(), g2.params.data() + g2.params.size(), final_bias(lay.hypernet, g1.params, 0));
  model.params.segment(static_cast<Eigen::Index>(lay.hypernet_offset), g1.params.size()) = g1.params;

  Mlp pr = Mlp::initialized(lay.prior, rng, c.init_gain);
  double* ph = final_bias(lay.prior, pr.params, 0);
  p = c.n;
  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j <= i; ++j, ++p) ph[p] = i == j ? inverse_softplus(1.0) : 0.0;
  p += c.n;
  for (int i = 0; i < c.m; ++i)
    for (int j = 0; j <= i; ++j, ++p) ph[p] = i == j ? inverse_softplus(0.1) : 0.0;
  model.params.segment(static_cast<Eigen::Index>(lay.prior_offset), pr.params.size()) = pr.params;

  std::uniform_real_distribution<double> bdist(-0.1, 0.1);
  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j < c.k; ++j) {
      const double v = bdist(rng);
      if (c.control_allowed(i, j)) model.params(static_cast<Eigen::Index>(lay.b_offset) + i * c.k + j) = v;
    }
  return model;
}

NesdeModel NesdeModel::from_fixed_dynamics(const NesdeConfig& config, const SpectralDynamics& dyn,
                                           const GaussianBelief& initial) {
  config.validate();
  validate(dyn);
  const auto& c = config;
  if (dyn.state_dim() != c.n || dyn.obs_dim() != c.m || dyn.control_dim() != c.k)
    throw DimensionError("fixed model: dynamics dimensions do not match the config");
  if (dyn.spectrum.complex_pairs() != c.n_complex_pairs)
    throw DimensionError("fixed model: number of complex pairs does not match the config");
  NesdeModel model;
  model.config = config;
  model.layout = NesdeLayout::of(config);
  model.params = VectorXd::Zero(static_cast<Eigen::Index>(model.layout.total));
  const auto& lay = model.layout;

  // Reorder to pairs first, then reals, carrying the basis columns along.
  Spectrum spec;
  MatrixXd v(c.n, c.n);
  int col = 0;
  for (int pass = 0; pass < 2; ++pass) {
    int src = 0;
    for (const auto& e : dyn.spectrum.entries) {
      if (e.is_pair() == (pass == 0)) {
        spec.entries.push_back(e);
        v.middleCols(col, e.dim()) = dyn.basis.V.middleCols(src, e.dim());
        col += e.dim();
      }
      src += e.dim();
    }
  }
  v = normalize_basis_columns<double>(spec, v);

  VectorXd g2 = VectorXd::Zero(lay.generator.num_params());
  double* head = final_bias(lay.generator, g2, 0);
  int p = 0;
  for (const auto& e : spec.entries) {
    if (c.stability_constraint && !(e.a < 0.0))
      throw ConfigError("fixed model: stability_constraint requires negative real parts");
    head[p++] = c.stability_constraint ? inverse_softplus(-e.a) : e.a;
    if (e.is_pair()) head[p++] = inverse_softplus(e.b);
  }
  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j < c.n; ++j) head[p++] = v(i, j) - (i == j ? 1.0 : 0.0);
  write_lower_raw(exact_lower(dyn.Q, "fixed model: Q"), head + p);

  VectorXd g1 = VectorXd::Zero(lay.hypernet.num_params());
  std::copy(g2.data(), g2.data() + g2.size(), final_bias(lay.hypernet, g1, 0));
  model.params.segment(static_cast<Eigen::Index>(lay.hypernet_offset), g1.size()) = g1;

  VectorXd pr = VectorXd::Zero(lay.prior.num_params());
  double* ph = final_bias(lay.prior, pr, 0);
  p = 0;
  for (int i = 0; i < c.n; ++i) ph[p++] = initial.mu(i);
  write_lower_raw(exact_lower(initial.sigma, "fixed model: initial covariance"), ph + p);
  p += c.n * (c.n + 1) / 2;
  for (int i = 0; i < c.n; ++i) ph[p++] = dyn.alpha(i);
  MatrixXd r = dyn.R;
  r.diagonal().array() -= c.r_floor;
  if (r.diagonal().minCoeff() < 0.0) r.setZero();
  write_lower_raw(exact_lower(r, "fixed model: R"), ph + p);
  model.params.segment(static_cast<Eigen::Index>(lay.prior_offset), pr.size()) = pr;

  for (int i = 0; i < c.n; ++i)
    for (int j = 0; j < c.k; ++j) {
      if (!c.control_allowed(i, j) && dyn.B(i, j) != 0.0)
        throw ConfigError("fixed model: B has an entry outside the control mask");
      model.params(static_cast<Eigen::Index>(lay.b_offset) + i * c.k + j) = dyn.B(i, j);
    }
  return model;
}

MatrixXd NesdeModel::control_map() const {
  return detail::control_map<double>(*this, std::span<const double>(params.data(), params.size()));
}

Json to_json(const NesdeModel& model) {
  return {{"config", to_json(model.config)}, {"params", vector_to_json(model.params)}};
}

NesdeModel model_from_json(const Json& j) {
  NesdeModel model;
  try {
    model.config = model_config_from_json(j.at("config"));
    model.layout = NesdeLayout::of(model.config);
    model.params = vector_from_json(j.at("params"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed model: ") + e.what());
  }
  if (model.params.size() != static_cast<Eigen::Index>(model.layout.total))
    throw DataError("model: parameter vector does not match the configured layout");
  return model;
}

namespace detail {

std::vector<double> interval_boundaries(const NesdeConfig& c, double t0, double t_end,
                                        const std::vector<double>& obs_times) {
  std::vector<double> events;
  for (double t : obs_times)
    if (t > t0 + kBoundaryTolerance && t <= t_end + kBoundaryTolerance) events.push_back(t);
  std::sort(events.begin(), events.end());
  std::vector<double> out;
  auto push = [&](double t) {
    if (t <= t0 + kBoundaryTolerance) return;
    if (!out.empty() && t <= out.back() + kBoundaryTolerance) return;
    out.push_back(t);
  };
  const double dt = c.update_interval;
  double anchor = t0;
  long j = 1;
  std::size_t e = 0;
  while (true) {
    const double grid = anchor + static_cast<double>(j) * dt;
    const double next_event = e < events.size() ? events[e] : std::numeric_limits<double>::infinity();
    const double next = std::min({grid, next_event, t_end});
    if (next > t_end - kBoundaryTolerance) {
      push(t_end);
      break;
    }
    push(next);
    if (next_event <= next + kBoundaryTolerance) {
      if (c.restart_grid_on_observation) {
        anchor = next_event;
        j = 1;
      }
      while (e < events.size() && events[e] <= next + kBoundaryTolerance) ++e;
    }
    if (grid <= next + kBoundaryTolerance) ++j;
  }
  return out;
}

}  // namespace detail

PriorOutput prior(const NesdeModel& model, const VectorXd& context) {
  return detail::prior_outputs<double>(model, std::span<const double>(model.params.data(), model.params.size()),
                                       context, 0.0);
}

SpectralDynamics hypernet_step(const NesdeModel& model, const VectorXd& context, const GaussianBelief& belief) {
  const std::span<const double> params(model.params.data(), static_cast<std::size_t>(model.params.size()));
  const auto seq = detail::sequence_state<double>(model, params, context, belief.t);
  return detail::hypernet_step<double>(model, seq, belief);
}

SequencePrediction run_sequence(const NesdeModel& model, const Trajectory& traj, const std::vector<double>& query_times,
                                const RunOptions& options) {
  SequencePrediction out;
  out.queries.resize(query_times.size());
  out.observations.resize(traj.obs.size());
  detail::SequenceCallbacks<double> cb;
  cb.on_observation = [&](std::size_t i, const Predictive& p) {
    out.observations[i] = {traj.obs[i].t, p.mean, p.cov, -1};
  };
  cb.on_query = [&](std::size_t q, const Predictive& p, int interval) {
    out.queries[q] = {query_times[q], p.mean, p.cov, interval};
  };
  if (options.record_intervals)
    cb.on_interval = [&](double t0, double t1, const SpectralDynamics& dyn) { out.intervals.push_back({t0, t1, dyn}); };
  detail::run_core<double>(model, std::span<const double>(model.params.data(), model.params.size()), traj,
                           query_times, options.filter_obs, cb);
  return out;
}

namespace {

double masked_sq_error(const VectorXd& mean, const VectorXd& y, const std::vector<bool>& mask) {
  double s = 0.0;
  int k = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      const double d = y(static_cast<Eigen::Index>(i)) - mean(static_cast<Eigen::Index>(i));
      s += d * d;
      ++k;
    }
  return k > 0 ? s / k : 0.0;
}

/// Number of filtered observations strictly before each observation.
std::vector<int> prior_observation_counts(const Trajectory& traj, const std::vector<bool>* filter_obs) {
  std::vector<int> counts(traj.obs.size(), 0);
  int filtered = 0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < traj.obs.size(); ++i) {
    while (j < i && traj.obs[j].t < traj.obs[i].t - kBoundaryTolerance) {
      if (filter_obs == nullptr || (*filter_obs)[j]) ++filtered;
      ++j;
    }
    counts[i] = filtered;
  }
  return counts;
}

}  // namespace

SequenceLoss sequence_loss(const NesdeModel& model, const Trajectory& traj, const std::vector<bool>* filter_obs,
                           bool with_gradient, ad::Tape* tape, double weight_decay) {
  SequenceLoss out;
  const std::vector<int> before = prior_observation_counts(traj, filter_obs);
  auto account = [&](std::size_t i, const VectorXd& mean) {
    if (before[i] >= 1) {
      out.sq_err_sum += masked_sq_error(mean, traj.obs[i].y_hat, traj.obs[i].mask);
      ++out.sq_err_count;
    }
    ++out.events;
  };
  if (!with_gradient) {
    detail::SequenceCallbacks<double> cb;
    cb.on_observation = [&](std::size_t i, const Predictive& p) {
      out.nll_sum += nll_loss<double>(p.mean, p.cov, traj.obs[i].y_hat, traj.obs[i].mask);
      account(i, p.mean);
    };
    detail::run_core<double>(model, std::span<const double>(model.params.data(), model.params.size()), traj, {},
                             filter_obs, cb);
    return out;
  }
  ad::Tape local;
  ad::Tape& tp = tape != nullptr ? *tape : local;
  tp.clear();
  ad::TapeScope scope(tp);
  ParameterBinding binding(tp, model.params);
  ad::Var total(0.0);
  detail::SequenceCallbacks<ad::Var> cb;
  cb.on_observation = [&](std::size_t i, const BasicPredictive<ad::Var>& p) {
    total += nll_loss<ad::Var>(p.mean, p.cov, traj.obs[i].y_hat, traj.obs[i].mask);
    account(i, linalg::values(p.mean));
  };
  detail::run_core<ad::Var>(model, binding.vars(), traj, {}, filter_obs, cb);
  out.nll_sum = total.value();
  if (weight_decay > 0.0 && out.events > 0) {
    const auto w = detail::generator_weights<ad::Var>(model, binding.vars(), traj.context);
    total += ad::Var(weight_decay * static_cast<double>(out.events)) * detail::generator_weight_penalty<ad::Var>(model, w);
  }
  tp.backward(total.index());
  out.grad = binding.gradient(tp);
  return out;
}

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", format_exact(c.learning_rate)},
          {"beta1", format_exact(c.beta1)},
          {"beta2", format_exact(c.beta2)},
          {"epsilon", format_exact(c.epsilon)},
          {"obs_keep_prob", format_exact(c.obs_keep_prob)},
          {"min_obs", c.min_obs},
          {"grad_clip", format_exact(c.grad_clip)},
          {"generator_weight_decay", format_exact(c.generator_weight_decay)},
          {"patience", c.patience},
          {"seed", c.seed},
          {"threads", c.threads},
          {"diagnostic_dir", c.diagnostic_dir},
          {"verbose", c.verbose}};
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string where = "train config";
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "obs_keep_prob",
                       "min_obs", "grad_clip", "generator_weight_decay", "patience", "seed", "threads", "diagnostic_dir", "verbose"},
                      where);
  TrainConfig c;
  c.epochs = get_field(j, "epochs", c.epochs, where);
  c.batch_size = get_field(j, "batch_size", c.batch_size, where);
  c.learning_rate = get_field(j, "learning_rate", c.learning_rate, where);
  c.beta1 = get_field(j, "beta1", c.beta1, where);
  c.beta2 = get_field(j, "beta2", c.beta2, where);
  c.epsilon = get_field(j, "epsilon", c.epsilon, where);
  c.obs_keep_prob = get_field(j, "obs_keep_prob", c.obs_keep_prob, where);
  c.min_obs = get_field(j, "min_obs", c.min_obs, where);
  c.grad_clip = get_field(j, "grad_clip", c.grad_clip, where);
  c.generator_weight_decay = get_field(j, "generator_weight_decay", c.generator_weight_decay, where);
  if (!(c.generator_weight_decay >= 0.0)) throw ConfigError("train config field 'generator_weight_decay': must be >= 0");
  c.patience = get_field(j, "patience", c.patience, where);
  c.seed = get_field(j, "seed", c.seed, where);
  c.threads = get_field(j, "threads", c.threads, where);
  c.diagnostic_dir = get_field(j, "diagnostic_dir", c.diagnostic_dir, where);
  c.verbose = get_field(j, "verbose", c.verbose, where);
  if (c.epochs < 0) throw ConfigError("train config field 'epochs': must be >= 0");
  if (c.batch_size < 1) throw ConfigError("train config field 'batch_size': must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("train config field 'learning_rate': must be positive");
  if (!(c.obs_keep_prob > 0.0 && c.obs_keep_prob <= 1.0))
    throw ConfigError("train config field 'obs_keep_prob': must lie in (0, 1]");
  if (c.min_obs < 0) throw ConfigError("train config field 'min_obs': must be >= 0");
  if (c.threads < 1) throw ConfigError("train config field 'threads': must be >= 1");
  return c;
}

namespace {

Json to_json(const EpochMetrics& e) {
  return {{"epoch", e.epoch},
          {"step", e.step},
          {"train_nll", format_exact(e.train_nll)},
          {"train_mse", format_exact(e.train_mse)},
          {"val_nll", format_exact(e.val_nll)},
          {"val_mse", format_exact(e.val_mse)}};
}

EpochMetrics epoch_from_json(const Json& j) {
  return {j.at("epoch").get<int>(),         j.at("step").get<long>(),         parse_exact(j.at("train_nll")),
          parse_exact(j.at("train_mse")), parse_exact(j.at("val_nll")), parse_exact(j.at("val_mse"))};
}

std::mt19937_64 stream(unsigned long long seed, unsigned long long a, unsigned long long b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

[[noreturn]] void nan_abort(const TrainConfig& cfg, const Trajectory& traj, const NesdeModel& model, int epoch,
                            long step, double loss, const std::string& cause = "") {
  const std::filesystem::path dir = cfg.diagnostic_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(cfg.diagnostic_dir);
  std::filesystem::create_directories(dir);
  const auto path = dir / "nan_dump.json";
  Json dump = {{"reason", cause.empty() ? std::string("non-finite loss or gradient") : cause},
               {"epoch", epoch},
               {"step", step},
               {"loss", format_exact(loss)},
               {"trajectory", to_json(traj)},
               {"model", to_json(model)}};
  std::ofstream(path) << dump.dump(1) << '\n';
  throw NumericalError("non-finite training loss on trajectory " + std::to_string(traj.id) + " at step " +
                       std::to_string(step) + "; diagnostic dump written to " + path.string());
}

}  // namespace

Json to_json(const Checkpoint& c) {
  Json log = Json::array();
  for (const auto& e : c.log) log.push_back(to_json(e));
  // Runtime settings do not affect the result and would tie the file to one
  // machine or output directory.
  Json train = to_json(c.train);
  for (const char* key : {"threads", "diagnostic_dir", "verbose"}) train.erase(key);
  return {{"format_version", kCheckpointFormatVersion},
          {"model", to_json(c.best)},
          {"resume",
           {{"params", vector_to_json(c.last.params)}, {"adam", to_json(c.adam)}, {"step", c.step}, {"epoch", c.epoch}}},
          {"best_val_nll", format_exact(c.best_val_nll)},
          {"train_config", train},
          {"log", log}};
}

Checkpoint checkpoint_from_json(const Json& j) {
  Checkpoint c;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw DataError("checkpoint format version " + std::to_string(version) + " is not supported");
    c.best = model_from_json(j.at("model"));
    c.last = c.best;
    const auto& r = j.at("resume");
    c.last.params = vector_from_json(r.at("params"));
    if (c.last.params.size() != c.best.params.size()) throw DataError("checkpoint: resume parameters have the wrong size");
    c.adam = adam_from_json(r.at("adam"));
    c.step = r.at("step").get<long>();
    c.epoch = r.at("epoch").get<int>();
    c.best_val_nll = parse_exact(j.at("best_val_nll"));
    c.train = train_config_from_json(j.at("train_config"));
    for (const auto& e : j.at("log")) c.log.push_back(epoch_from_json(e));
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << to_json(c).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

std::vector<bool> subsample_observations(std::size_t count, double keep, int min_obs, std::mt19937_64& rng) {
  std::vector<bool> mask(count, false);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < count; ++i) {
    mask[i] = unif(rng) < keep;
    kept += mask[i] ? 1 : 0;
  }
  const std::size_t need = std::min(count, static_cast<std::size_t>(std::max(0, min_obs)));
  if (kept < need) {
    std::vector<std::size_t> dropped;
    for (std::size_t i = 0; i < count; ++i)
      if (!mask[i]) dropped.push_back(i);
    std::shuffle(dropped.begin(), dropped.end(), rng);
    for (std::size_t i = 0; kept < need; ++i, ++kept) mask[dropped[i]] = true;
  }
  return mask;
}

DatasetScore score(const NesdeModel& model, const Dataset& data, int threads) {
  std::vector<SequenceLoss> losses(data.size());
  parallel_for(data.size(), threads,
               [&](std::size_t i, std::size_t) { losses[i] = sequence_loss(model, data[i], nullptr, false); });
  DatasetScore s;
  double nll = 0.0;
  double se = 0.0;
  for (const auto& l : losses) {
    nll += l.nll_sum;
    se += l.sq_err_sum;
    s.events += l.events;
    s.mse_events += l.sq_err_count;
  }
  s.nll = s.events > 0 ? nll / static_cast<double>(s.events) : 0.0;
  s.mse = s.mse_events > 0 ? se / static_cast<double>(s.mse_events) : 0.0;
  return s;
}

Checkpoint train(const NesdeModel& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                 const Checkpoint* resume) {
  if (train_set.empty()) throw DataError("train: the training set is empty");
  Checkpoint ck;
  if (resume != nullptr) {
    ck = *resume;
  } else {
    ck.best = model;
    ck.last = model;
    ck.adam = AdamState::for_params(model.params.size());
  }
  ck.train = cfg;
  ck.adam.learning_rate = cfg.learning_rate;
  ck.adam.beta1 = cfg.beta1;
  ck.adam.beta2 = cfg.beta2;
  ck.adam.epsilon = cfg.epsilon;
  NesdeModel current = ck.last;
  const Dataset& val = val_set.empty() ? train_set : val_set;
  std::vector<ad::Tape> tapes(static_cast<std::size_t>(std::max(1, cfg.threads)));
  int since_best = 0;

  for (int epoch = ck.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = stream(cfg.seed, 0x5eed, static_cast<unsigned long long>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_nll = 0.0;
    double epoch_se = 0.0;
    std::size_t epoch_events = 0;
    std::size_t epoch_mse_events = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t count = stop - start;
      std::vector<SequenceLoss> losses(count);
      std::vector<std::string> failures(count);
      parallel_for(count, cfg.threads, [&](std::size_t i, std::size_t worker) {
        const Trajectory& traj = train_set[order[start + i]];
        auto rng = stream(cfg.seed, static_cast<unsigned long long>(epoch),
                          static_cast<unsigned long long>(traj.id) * 2654435761ULL + order[start + i]);
        const auto keep = subsample_observations(traj.obs.size(), cfg.obs_keep_prob, cfg.min_obs, rng);
        try {
          losses[i] = sequence_loss(current, traj, &keep, true, &tapes[worker], cfg.generator_weight_decay);
        } catch (const NumericalError& e) {
          losses[i].nll_sum = std::numeric_limits<double>::quiet_NaN();
          failures[i] = e.what();
        }
      });
      VectorXd grad = VectorXd::Zero(current.params.size());
      double batch_nll = 0.0;
      std::size_t events = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const auto& l = losses[i];
        if (!std::isfinite(l.nll_sum) || !l.grad.allFinite())
          nan_abort(cfg, train_set[order[start + i]], current, epoch, ck.step, l.nll_sum, failures[i]);
        grad += l.grad;
        batch_nll += l.nll_sum;
        events += l.events;
        epoch_se += l.sq_err_sum;
        epoch_mse_events += l.sq_err_count;
      }
      epoch_nll += batch_nll;
      epoch_events += events;
      if (events == 0) continue;
      grad /= static_cast<double>(events);
      const double norm = grad.norm();
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) grad *= cfg.grad_clip / norm;
      adam_step(ck.adam, current.params, grad);
      ++ck.step;
      if (!current.params.allFinite())
        nan_abort(cfg, train_set[order[start]], current, epoch, ck.step, batch_nll);
    }

    DatasetScore vs;
    try {
      vs = score(current, val, cfg.threads);
    } catch (const NumericalError& e) {
      nan_abort(cfg, val.front(), current, epoch, ck.step, std::numeric_limits<double>::quiet_NaN(), e.what());
    }
    if (!std::isfinite(vs.nll)) nan_abort(cfg, val.front(), current, epoch, ck.step, vs.nll);
    EpochMetrics em;
    em.epoch = epoch;
    em.step = ck.step;
    em.train_nll = epoch_events > 0 ? epoch_nll / static_cast<double>(epoch_events) : 0.0;
    em.train_mse = epoch_mse_events > 0 ? epoch_se / static_cast<double>(epoch_mse_events) : 0.0;
    em.val_nll = vs.nll;
    em.val_mse = vs.mse;
    ck.log.push_back(em);
    ck.epoch = epoch;
    ck.last = current;
    if (vs.nll < ck.best_val_nll) {
      ck.best_val_nll = vs.nll;
      ck.best = current;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " step " << ck.step << " train_nll " << em.train_nll << " train_mse "
                << em.train_mse << " val_nll " << em.val_nll << " val_mse " << em.val_mse << '\n';
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  return ck;
}

}  // namespace nesde
