#include "nesde/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Eigenvalues>
#include <boost/random/normal_distribution.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "nesde/spectral.hpp"

namespace nesde {

using Json = nlohmann::json;

namespace {

VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

enum Purpose : unsigned long long {
  kInitialState = 1,
  kControlNoise = 2,
  kObservationTimes = 3,
  kProcessNoise = 4,
  kObservationNoise = 5,
  kMasks = 6,
  kCenter = 7,
};

}  // namespace

MatrixXd psd_factor(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw DimensionError("psd_factor: matrix is not square");
  if (a.size() == 0) return a;
  const MatrixXd s = 0.5 * (a + a.transpose());
  if ((s - a).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, a.cwiseAbs().maxCoeff()))
    throw NumericalError("covariance is not symmetric");
  Eigen::LLT<MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) throw NumericalError("covariance is not positive semi-definite");
  const VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

SdePath simulate_linear_sde(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const VectorXd& x0,
                            const StatePolicy& policy, double horizon, double dt, std::mt19937_64& rng,
                            int store_every, const VectorXd& offset) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || q.rows() != n || q.cols() != n || x0.size() != n)
    throw DimensionError("simulate_linear_sde: dimension mismatch");
  if (offset.size() != 0 && offset.size() != n) throw DimensionError("simulate_linear_sde: offset dimension mismatch");
  if (!(dt > 0.0)) throw ConfigError("simulate_linear_sde: dt must be positive");
  if (store_every < 1) throw ConfigError("simulate_linear_sde: store_every must be >= 1");
  const MatrixXd l = psd_factor(q);
  const double sqdt = std::sqrt(dt);
  const auto steps = static_cast<long>(std::ceil(horizon / dt - 1e-9));
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  VectorXd c = offset.size() == n ? offset : VectorXd::Zero(n);
  VectorXd x = x0;
  VectorXd xi(n);
  SdePath path;
  path.t.push_back(0.0);
  path.x.push_back(x);
  for (long s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) * dt;
    const double h = std::min(dt, horizon - t);
    VectorXd drift = a * x + c;
    if (policy && b.cols() > 0) drift += b * policy(t, x);
    for (Eigen::Index i = 0; i < n; ++i) xi(i) = normal(rng);
    x += drift * h + (h == dt ? sqdt : std::sqrt(h)) * (l * xi);
    if ((s + 1) % store_every == 0 || s + 1 == steps) {
      path.t.push_back(t + h);
      path.x.push_back(x);
    }
  }
  return path;
}

ExactStep ExactStep::of(const MatrixXd& a, const MatrixXd& q, double h) {
  const Eigen::Index n = a.rows();
  ExactStep s;
  MatrixXd van_loan = MatrixXd::Zero(2 * n, 2 * n);
  van_loan.topLeftCorner(n, n) = -a * h;
  van_loan.topRightCorner(n, n) = q * h;
  van_loan.bottomRightCorner(n, n) = a.transpose() * h;
  const MatrixXd e = van_loan.exp();
  s.F = e.bottomRightCorner(n, n).transpose();
  s.W = s.F * e.topRightCorner(n, n);
  s.W = 0.5 * (s.W + s.W.transpose());
  MatrixXd aug = MatrixXd::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = a * h;
  aug.topRightCorner(n, n) = MatrixXd::Identity(n, n) * h;
  s.G = aug.exp().topRightCorner(n, n);
  s.W_chol = psd_factor(s.W);
  return s;
}

VectorXd ExactStep::apply(const VectorXd& x, const VectorXd& f, std::mt19937_64& rng, bool noisy) const {
  VectorXd out = F * x;
  if (f.size() > 0) out += G * f;
  if (noisy) out += W_chol * standard_normal(x.size(), rng);
  return out;
}

std::mt19937_64 derived_stream(unsigned long long seed, unsigned long long index, unsigned long long purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),  static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

BenchmarkSpec BenchmarkSpec::defaults_for(const std::string& generator) {
  BenchmarkSpec s;
  s.generator = generator;
  if (generator == "controlled-complex" || generator == "controlled-real") {
    s.n_trajectories = 1000;
  } else if (generator == "spectrum-A1" || generator == "spectrum-A2" || generator == "spectrum-A3") {
    s.n_trajectories = 200;
  } else if (generator == "oracle") {
    s.n_trajectories = 1000;
    s.obs_interval = 1.0;
    s.coupling = 0.8;
    s.control_dt = 0.01;
  } else if (generator == "ou2d") {
    s.n_trajectories = 1000;
    s.obs_rate = 0.6;
    s.policy = "none";
    s.coupling = 0.0;
    s.sigma_w = 1.0;
  } else {
    throw ConfigError("benchmark spec field 'generator': unknown generator '" + generator + "'");
  }
  return s;
}

void BenchmarkSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("benchmark spec field '" + field + "': " + why);
  };
  (void)defaults_for(generator);
  if (n_trajectories < 1) fail("n_trajectories", "must be positive");
  if (obs_min < 0 || obs_max < obs_min) fail("obs_min/obs_max", "need 0 <= obs_min <= obs_max");
  if (obs_interval < 0.0) fail("obs_interval", "must be non-negative");
  if (obs_rate < 0.0) fail("obs_rate", "must be non-negative");
  if (obs_noise < 0.0) fail("obs_noise", "must be non-negative");
  if (policy != "sd" && policy != "ood" && policy != "none") fail("policy", "must be one of sd, ood, none");
  if (!(sigma_w >= 0.0)) fail("sigma_w", "must be non-negative");
  if (!(horizon > 0.0)) fail("horizon", "must be positive");
  if (!(control_dt > 0.0)) fail("control_dt", "must be positive");
  if (control_segments < 1) fail("control_segments", "must be positive");
  if (b_high < b_low) fail("b_high", "must be >= b_low");
  if (x0_std < 0.0) fail("x0_std", "must be non-negative");
  if (truth_dt < 0.0) fail("truth_dt", "must be non-negative");
  if (ou_center_high < ou_center_low) fail("ou_center_high", "must be >= ou_center_low");
  if (ou_x0_std < 0.0) fail("ou_x0_std", "must be non-negative");
}

Json to_json(const BenchmarkSpec& s) {
  return {{"generator", s.generator},
          {"n_trajectories", s.n_trajectories},
          {"obs_min", s.obs_min},
          {"obs_max", s.obs_max},
          {"obs_interval", format_exact(s.obs_interval)},
          {"obs_rate", format_exact(s.obs_rate)},
          {"obs_noise", format_exact(s.obs_noise)},
          {"policy", s.policy},
          {"coupling", format_exact(s.coupling)},
          {"sigma_w", format_exact(s.sigma_w)},
          {"horizon", format_exact(s.horizon)},
          {"control_dt", format_exact(s.control_dt)},
          {"control_segments", s.control_segments},
          {"b_low", format_exact(s.b_low)},
          {"b_high", format_exact(s.b_high)},
          {"x0_std", format_exact(s.x0_std)},
          {"truth_dt", format_exact(s.truth_dt)},
          {"ou_theta", format_exact(s.ou_theta)},
          {"ou_center_low", format_exact(s.ou_center_low)},
          {"ou_center_high", format_exact(s.ou_center_high)},
          {"ou_x0_std", format_exact(s.ou_x0_std)},
          {"ou_random_mask", s.ou_random_mask},
          {"seed", s.seed}};
}

BenchmarkSpec benchmark_spec_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("benchmark spec: expected a JSON object");
  if (!j.contains("generator")) throw ConfigError("benchmark spec field 'generator': missing");
  if (!j.at("generator").is_string()) throw ConfigError("benchmark spec field 'generator': must be a string");
  BenchmarkSpec s = BenchmarkSpec::defaults_for(j.at("generator").get<std::string>());
  static const std::set<std::string> known = {
      "generator", "n_trajectories", "obs_min", "obs_max", "obs_interval", "obs_rate", "obs_noise", "policy",
      "coupling", "sigma_w", "horizon", "control_dt", "control_segments", "b_low", "b_high", "x0_std", "truth_dt",
      "ou_theta", "ou_center_low", "ou_center_high", "ou_x0_std", "ou_random_mask", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("benchmark spec field '" + key + "': unknown key");
  auto num = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    try {
      out = parse_exact(j.at(key));
    } catch (const std::exception&) {
      throw ConfigError(std::string("benchmark spec field '") + key + "': expected a number");
    }
  };
  auto integer = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_integer())
      throw ConfigError(std::string("benchmark spec field '") + key + "': expected an integer");
    out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
  };
  auto text = [&](const char* key, std::string& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_string()) throw ConfigError(std::string("benchmark spec field '") + key + "': expected a string");
    out = j.at(key).get<std::string>();
  };
  integer("n_trajectories", s.n_trajectories);
  integer("obs_min", s.obs_min);
  integer("obs_max", s.obs_max);
  num("obs_interval", s.obs_interval);
  num("obs_rate", s.obs_rate);
  num("obs_noise", s.obs_noise);
  text("policy", s.policy);
  num("coupling", s.coupling);
  num("sigma_w", s.sigma_w);
  num("horizon", s.horizon);
  num("control_dt", s.control_dt);
  integer("control_segments", s.control_segments);
  num("b_low", s.b_low);
  num("b_high", s.b_high);
  num("x0_std", s.x0_std);
  num("truth_dt", s.truth_dt);
  num("ou_theta", s.ou_theta);
  num("ou_center_low", s.ou_center_low);
  num("ou_center_high", s.ou_center_high);
  num("ou_x0_std", s.ou_x0_std);
  if (j.contains("ou_random_mask")) {
    if (!j.at("ou_random_mask").is_boolean())
      throw ConfigError("benchmark spec field 'ou_random_mask': expected a boolean");
    s.ou_random_mask = j.at("ou_random_mask").get<bool>();
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      throw ConfigError("benchmark spec field 'seed': expected a non-negative integer");
    if (j.at("seed").is_number_integer() && j.at("seed").get<long long>() < 0)
      throw ConfigError("benchmark spec field 'seed': expected a non-negative integer");
    s.seed = j.at("seed").get<unsigned long long>();
  }
  s.validate();
  return s;
}

MatrixXd benchmark_operator(const std::string& which) {
  if (which == "A1") return (MatrixXd(2, 2) << -0.5, -2.0, 2.0, -1.0).finished();
  if (which == "A2") return (MatrixXd(2, 2) << -0.5, -0.5, -0.5, -1.0).finished();
  if (which == "A3") return (MatrixXd(2, 2) << 1.0, -2.0, 2.0, -1.0).finished();
  throw ConfigError("unknown benchmark operator '" + which + "'");
}

LinearGenerator benchmark_generator(const BenchmarkSpec& spec) {
  LinearGenerator g;
  const std::string& id = spec.generator;
  if (id == "ou2d") {
    g.A = -spec.ou_theta * MatrixXd::Identity(2, 2);
    g.B = MatrixXd::Zero(2, 0);
    g.Q = (MatrixXd(2, 2) << 1.0, 0.5, 0.5, 1.0).finished() * spec.sigma_w * spec.sigma_w;
    g.m = 2;
    return g;
  }
  if (id == "controlled-complex" || id == "oracle") g.A = benchmark_operator("A1");
  else if (id == "controlled-real") g.A = benchmark_operator("A2");
  else if (id == "spectrum-A1") g.A = benchmark_operator("A1");
  else if (id == "spectrum-A2") g.A = benchmark_operator("A2");
  else if (id == "spectrum-A3") g.A = benchmark_operator("A3");
  else throw ConfigError("benchmark spec field 'generator': unknown generator '" + id + "'");
  g.B = (MatrixXd(2, 1) << 0.0, 1.0).finished();
  g.Q = spec.sigma_w * spec.sigma_w * MatrixXd::Identity(2, 2);
  g.m = 1;
  return g;
}

namespace {

/// Exact-transition simulation on the merged grid of control updates, truth
/// samples and observation times.
class ExactSimulator {
 public:
  ExactSimulator(const LinearGenerator& gen, bool noisy) : gen_(gen), noisy_(noisy) {}

  struct Result {
    std::vector<VectorXd> at_obs;
    std::vector<TruthSample> truth;
    std::vector<ControlSegment> control;
  };

  /// `control_at(t, x)` is sampled at every multiple of control_dt (zero-order
  /// hold); `offset` is a constant drift term.
  Result run(const VectorXd& x0, const VectorXd& offset, const std::vector<double>& obs_times, double horizon,
             double control_dt, double truth_dt, const StatePolicy& control_at, std::mt19937_64& noise) {
    std::vector<std::pair<double, int>> events;  // kind bits: 1 control, 2 truth, 4 observation
    const bool controlled = gen_.B.cols() > 0 && control_at != nullptr;
    if (controlled) {
      const auto nc = static_cast<long>(std::ceil(horizon / control_dt - 1e-9));
      for (long i = 0; i < nc; ++i) events.emplace_back(static_cast<double>(i) * control_dt, 1);
    }
    if (truth_dt > 0.0) {
      const auto nt = static_cast<long>(std::floor(horizon / truth_dt + 1e-9));
      for (long i = 0; i <= nt; ++i) events.emplace_back(static_cast<double>(i) * truth_dt, 2);
    }
    for (double t : obs_times) events.emplace_back(t, 4);
    events.emplace_back(horizon, 0);
    events.emplace_back(0.0, 0);
    std::sort(events.begin(), events.end());
    std::vector<std::pair<double, int>> merged;
    for (const auto& e : events) {
      if (!merged.empty() && std::abs(e.first - merged.back().first) <= 1e-12) merged.back().second |= e.second;
      else merged.push_back(e);
    }

    Result out;
    VectorXd x = x0;
    VectorXd u = VectorXd::Zero(gen_.B.cols());
    VectorXd f = offset.size() > 0 ? offset : VectorXd::Zero(x.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
      const double t = merged[i].first;
      const int kind = merged[i].second;
      if (kind & 1) {
        u = control_at(t, x);
        const double end = std::min(horizon, t + control_dt);
        if (end > t) out.control.push_back({t, end, u});
      }
      if (kind & 4) out.at_obs.push_back(x);
      if (kind & (2 | 4)) {
        if (out.truth.empty() || t > out.truth.back().t) out.truth.push_back({t, x});
      }
      if (i + 1 == merged.size()) break;
      const double h = merged[i + 1].first - t;
      if (h <= 0.0) continue;
      const VectorXd drive = controlled ? VectorXd(f + gen_.B * u) : f;
      x = step_for(h).apply(x, drive, noise, noisy_);
    }
    if (truth_dt <= 0.0) {
      std::vector<TruthSample> only_obs;
      for (const auto& s : out.truth)
        if (std::any_of(obs_times.begin(), obs_times.end(), [&](double t) { return std::abs(t - s.t) <= 1e-12; }))
          only_obs.push_back(s);
      out.truth = std::move(only_obs);
    }
    return out;
  }

 private:
  const ExactStep& step_for(double h) {
    const auto key = std::llround(h * 1e12);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, ExactStep::of(gen_.A, gen_.Q, h)).first;
    return it->second;
  }

  const LinearGenerator& gen_;
  bool noisy_;
  std::map<long long, ExactStep> cache_;
};

std::vector<double> random_obs_times(const BenchmarkSpec& spec, std::mt19937_64& rng) {
  std::vector<double> times;
  if (spec.obs_interval > 0.0) {
    for (double t = spec.obs_interval; t <= spec.horizon + 1e-9; t += spec.obs_interval)
      times.push_back(std::round(t * 1e9) / 1e9);
    return times;
  }
  std::uniform_real_distribution<double> unif(0.0, spec.horizon);
  if (spec.obs_rate > 0.0) {
    std::exponential_distribution<double> gap(spec.obs_rate);
    for (double t = gap(rng); t <= spec.horizon; t += gap(rng)) times.push_back(t);
    return times;
  }
  std::uniform_int_distribution<int> count(spec.obs_min, spec.obs_max);
  const int c = count(rng);
  for (int i = 0; i < c; ++i) times.push_back(unif(rng));
  std::sort(times.begin(), times.end());
  return times;
}

Json vector_meta(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(format_exact(x));
  return a;
}

Trajectory assemble(long id, const BenchmarkSpec& spec, const std::vector<double>& obs_times,
                    const ExactSimulator::Result& sim, int m, int k, std::mt19937_64& obs_noise,
                    const std::vector<std::vector<bool>>& masks) {
  Trajectory traj;
  traj.id = id;
  traj.context = VectorXd();
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < obs_times.size(); ++i) {
    Observation o;
    o.t = obs_times[i];
    o.mask = masks.empty() ? std::vector<bool>(static_cast<std::size_t>(m), true) : masks[i];
    o.y_hat = VectorXd::Zero(m);
    for (int d = 0; d < m; ++d) {
      const double noise = spec.obs_noise > 0.0 ? spec.obs_noise * normal(obs_noise) : 0.0;
      if (o.mask[static_cast<std::size_t>(d)]) o.y_hat(d) = sim.at_obs[i](d) + noise;
    }
    traj.obs.push_back(std::move(o));
  }
  traj.control = ControlSignal(k, sim.control);
  traj.truth = sim.truth;
  traj.meta = {{"spec", to_json(spec)}, {"seed", spec.seed}, {"index", id}, {"horizon", format_exact(spec.horizon)}};
  return traj;
}

Dataset make_linear_controlled(const BenchmarkSpec& spec) {
  spec.validate();
  const LinearGenerator gen = benchmark_generator(spec);
  if (gen.B.cols() == 0) throw ConfigError("benchmark spec field 'generator': not a controlled benchmark");
  const double sign = spec.policy == "sd" ? -1.0 : (spec.policy == "ood" ? 1.0 : 0.0);
  Dataset data;
  data.reserve(static_cast<std::size_t>(spec.n_trajectories));
  for (int i = 0; i < spec.n_trajectories; ++i) {
    const auto idx = static_cast<unsigned long long>(i);
    auto init_rng = derived_stream(spec.seed, idx, kInitialState);
    auto b_rng = derived_stream(spec.seed, idx, kControlNoise);
    auto time_rng = derived_stream(spec.seed, idx, kObservationTimes);
    auto noise_rng = derived_stream(spec.seed, idx, kProcessNoise);
    auto obs_rng = derived_stream(spec.seed, idx, kObservationNoise);

    const VectorXd x0 = spec.x0_std * standard_normal(2, init_rng);
    std::uniform_real_distribution<double> bdist(spec.b_low, spec.b_high);
    std::vector<double> b(static_cast<std::size_t>(spec.control_segments));
    for (auto& v : b) v = bdist(b_rng);
    const double seg_len = spec.horizon / spec.control_segments;
    const std::vector<double> obs_times = random_obs_times(spec, time_rng);
    StatePolicy policy = [&](double t, const VectorXd& x) {
      const auto s = std::min<std::size_t>(b.size() - 1, static_cast<std::size_t>(std::floor(t / seg_len + 1e-9)));
      return VectorXd::Constant(1, b[s] + sign * spec.coupling * x(0));
    };
    ExactSimulator sim(gen, spec.sigma_w > 0.0);
    const auto res = sim.run(x0, VectorXd(), obs_times, spec.horizon, spec.control_dt, spec.truth_dt, policy, noise_rng);
    Trajectory traj = assemble(i, spec, obs_times, res, gen.m, 1, obs_rng, {});
    std::vector<double> breaks;
    for (int s = 0; s < spec.control_segments; ++s) breaks.push_back(s * seg_len);
    traj.meta["b"] = vector_meta(b);
    traj.meta["b_breaks"] = vector_meta(breaks);
    traj.meta["x0"] = vector_to_json(x0);
    data.push_back(std::move(traj));
  }
  return data;
}

}  // namespace

Dataset make_controlled_benchmark(const BenchmarkSpec& spec) {
  if (spec.generator != "controlled-complex" && spec.generator != "controlled-real")
    throw ConfigError("benchmark spec field 'generator': expected controlled-complex or controlled-real");
  return make_linear_controlled(spec);
}

Dataset make_spectrum_benchmark(const BenchmarkSpec& spec) {
  if (spec.generator.rfind("spectrum-", 0) != 0)
    throw ConfigError("benchmark spec field 'generator': expected spectrum-A1, spectrum-A2 or spectrum-A3");
  return make_linear_controlled(spec);
}

Dataset make_oracle_benchmark(const BenchmarkSpec& spec) {
  if (spec.generator != "oracle") throw ConfigError("benchmark spec field 'generator': expected oracle");
  return make_linear_controlled(spec);
}

Dataset make_ou_benchmark(const BenchmarkSpec& spec) {
  if (spec.generator != "ou2d") throw ConfigError("benchmark spec field 'generator': expected ou2d");
  spec.validate();
  const LinearGenerator gen = benchmark_generator(spec);
  Dataset data;
  data.reserve(static_cast<std::size_t>(spec.n_trajectories));
  for (int i = 0; i < spec.n_trajectories; ++i) {
    const auto idx = static_cast<unsigned long long>(i);
    auto center_rng = derived_stream(spec.seed, idx, kCenter);
    auto init_rng = derived_stream(spec.seed, idx, kInitialState);
    auto time_rng = derived_stream(spec.seed, idx, kObservationTimes);
    auto noise_rng = derived_stream(spec.seed, idx, kProcessNoise);
    auto obs_rng = derived_stream(spec.seed, idx, kObservationNoise);
    auto mask_rng = derived_stream(spec.seed, idx, kMasks);

    std::uniform_real_distribution<double> cdist(spec.ou_center_low, spec.ou_center_high);
    VectorXd center(2);
    center << cdist(center_rng), cdist(center_rng);
    const VectorXd x0 = center + spec.ou_x0_std * standard_normal(2, init_rng);
    const std::vector<double> obs_times = random_obs_times(spec, time_rng);
    std::vector<std::vector<bool>> masks;
    std::uniform_int_distribution<int> pick(0, 2);
    for (std::size_t o = 0; o < obs_times.size(); ++o) {
      const int p = spec.ou_random_mask ? pick(mask_rng) : 2;
      masks.push_back({p != 1, p != 0});
    }
    ExactSimulator sim(gen, spec.sigma_w > 0.0);
    const VectorXd offset = spec.ou_theta * center;
    const auto res = sim.run(x0, offset, obs_times, spec.horizon, spec.control_dt, spec.truth_dt, nullptr, noise_rng);
    Trajectory traj = assemble(i, spec, obs_times, res, 2, 0, obs_rng, masks);
    traj.meta["center"] = vector_to_json(center);
    traj.meta["x0"] = vector_to_json(x0);
    data.push_back(std::move(traj));
  }
  return data;
}

Dataset make_benchmark(const BenchmarkSpec& spec) {
  if (spec.generator == "ou2d") return make_ou_benchmark(spec);
  if (spec.generator == "oracle") return make_oracle_benchmark(spec);
  if (spec.generator.rfind("spectrum-", 0) == 0) return make_spectrum_benchmark(spec);
  return make_controlled_benchmark(spec);
}

DatasetSplits split_dataset(const Dataset& data, double train_fraction, double val_fraction) {
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0)
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  const auto n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const auto n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
  DatasetSplits s;
  s.train.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(data.begin() + static_cast<std::ptrdiff_t>(n_train),
               data.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(data.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), data.end());
  return s;
}

}  // namespace nesde
