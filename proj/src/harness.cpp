#include "nesde/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "nesde/parallel.hpp"
#include "nesde/spectral.hpp"

#ifndef NESDE_VERSION
#define NESDE_VERSION "unknown"
#endif

namespace nesde {

using Json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_x(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

/// Indices of filtered observations strictly earlier than each observation.
std::vector<int> last_filtered_before(const Trajectory& traj, const EvalWindow& w, std::vector<int>* counts) {
  std::vector<int> last(traj.obs.size(), -1);
  counts->assign(traj.obs.size(), 0);
  int seen = 0;
  int latest = -1;
  std::size_t j = 0;
  for (std::size_t i = 0; i < traj.obs.size(); ++i) {
    while (j < i && traj.obs[j].t < traj.obs[i].t - kBoundaryTolerance) {
      if (w.filters(traj.obs[j])) {
        ++seen;
        latest = static_cast<int>(j);
      }
      ++j;
    }
    last[i] = latest;
    (*counts)[i] = seen;
  }
  return last;
}

void check_pairing(const Dataset& data, const Predictions& preds) {
  if (data.size() != preds.size())
    throw DataError("predictions cover " + std::to_string(preds.size()) + " trajectories, dataset has " +
                    std::to_string(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].id != preds[i].id)
      throw DataError("prediction " + std::to_string(i) + " belongs to trajectory " + std::to_string(preds[i].id) +
                      ", expected " + std::to_string(data[i].id));
    if (data[i].obs.size() != preds[i].observations.size())
      throw DataError("trajectory " + std::to_string(data[i].id) + ": observation count differs from predictions");
  }
}

/// Per-trajectory sums keyed by curve point.
struct Accumulator {
  std::size_t trajectories = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;

  void add(const std::string& key, std::size_t traj, double value) {
    auto& [num, den] = series[key];
    if (num.empty()) {
      num.assign(trajectories, 0.0);
      den.assign(trajectories, 0.0);
    }
    num[traj] += value;
    den[traj] += 1.0;
  }
  const std::pair<std::vector<double>, std::vector<double>>* find(const std::string& key) const {
    const auto it = series.find(key);
    return it == series.end() ? nullptr : &it->second;
  }
};

std::string key_of(const std::string& metric, const std::string& x) { return metric + '\x1f' + x; }

Accumulator accumulate(const std::vector<std::vector<EventRecord>>& events, const EvalOptions& opts) {
  Accumulator acc;
  acc.trajectories = events.size();
  for (std::size_t i = 0; i < events.size(); ++i)
    for (const auto& e : events[i]) {
      if (std::isfinite(e.nll)) {
        acc.add(key_of("nll", ""), i, e.nll);
        if (e.k <= opts.max_k) acc.add(key_of("nll_k", std::to_string(e.k)), i, e.nll);
      }
      if (e.k < 1) continue;
      if (!std::isfinite(e.sq_err)) {
        acc.add(key_of("missing", ""), i, 1.0);
        continue;
      }
      acc.add(key_of("mse", ""), i, e.sq_err);
      if (e.k <= opts.max_k) acc.add(key_of("mse_k", std::to_string(e.k)), i, e.sq_err);
      if (std::isfinite(e.since_last) && opts.since_bin > 0.0) {
        const double bin = std::floor(e.since_last / opts.since_bin);
        acc.add(key_of("mse_since_last", format_x((bin + 0.5) * opts.since_bin)), i, e.sq_err);
      }
    }
  return acc;
}

double sum_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

MetricRow row_from(const Bootstrap& boot, const std::string& metric, const std::string& split, const std::string& x,
                   const std::vector<double>& num, const std::vector<double>& den) {
  const Estimate e = boot.ratio(num, den);
  return {metric, split, x, e.value, e.low, e.high, e.n};
}

MetricReport report_from(const Accumulator& acc, const std::string& split, const EvalOptions& opts) {
  const Bootstrap boot(acc.trajectories, opts.resamples, opts.seed);
  MetricReport r;
  // Scalars first, then curves ordered by their numeric x.
  for (const char* scalar : {"mse", "nll"})
    if (const auto* s = acc.find(key_of(scalar, ""))) r.rows.push_back(row_from(boot, scalar, split, "", s->first, s->second));
  if (const auto* s = acc.find(key_of("missing", "")))
    r.rows.push_back({"missing", split, "", sum_of(s->first), sum_of(s->first), sum_of(s->first),
                      static_cast<std::size_t>(sum_of(s->second))});
  for (const char* curve : {"mse_k", "nll_k", "mse_since_last"}) {
    std::vector<std::pair<double, std::string>> xs;
    const std::string prefix = std::string(curve) + '\x1f';
    for (const auto& [key, _] : acc.series)
      if (key.starts_with(prefix)) {
        const std::string x = key.substr(prefix.size());
        xs.emplace_back(std::stod(x), x);
      }
    std::sort(xs.begin(), xs.end());
    for (const auto& [_, x] : xs) {
      const auto* s = acc.find(key_of(curve, x));
      r.rows.push_back(row_from(boot, curve, split, x, s->first, s->second));
    }
  }
  r.info["trajectories"] = acc.trajectories;
  return r;
}

MetricReport prefixed(MetricReport r, const std::string& prefix) {
  for (auto& row : r.rows) row.metric = prefix + row.metric;
  return r;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Estimate percentile_estimate(double value, std::vector<double> samples, std::size_t n) {
  Estimate e;
  e.value = value;
  e.n = n;
  samples.erase(std::remove_if(samples.begin(), samples.end(), [](double x) { return !std::isfinite(x); }),
                samples.end());
  if (samples.empty()) {
    e.low = e.high = value;
    return e;
  }
  e.low = quantile(samples, 0.025);
  e.high = quantile(samples, 0.975);
  return e;
}

Json components_json(const std::vector<SpectrumComponent>& cs) {
  Json out = Json::array();
  for (const auto& c : cs)
    out.push_back({{"kind", c.kind},
                   {"index", c.index},
                   {"re_mean", c.re_mean},
                   {"re_std", c.re_std},
                   {"im_mean", c.im_mean},
                   {"im_std", c.im_std},
                   {"count", c.count}});
  return out;
}

}  // namespace

Json to_json(const TrajectoryPredictions& p) {
  Json obs = Json::array();
  for (const auto& o : p.observations)
    obs.push_back({{"t", format_exact(o.t)},
                   {"mean", vector_to_json(o.mean)},
                   {"cov", matrix_to_json(o.cov)},
                   {"filtered", o.filtered}});
  Json queries = Json::array();
  for (const auto& q : p.queries)
    queries.push_back({{"t", format_exact(q.t)},
                       {"mean", vector_to_json(q.mean)},
                       {"cov", matrix_to_json(q.cov)},
                       {"interval", q.interval}});
  return {{"id", p.id}, {"observations", obs}, {"queries", queries}};
}

TrajectoryPredictions trajectory_predictions_from_json(const Json& j) {
  TrajectoryPredictions p;
  try {
    p.id = j.at("id").get<long>();
    for (const auto& o : j.at("observations")) {
      ObservationPrediction op;
      op.t = parse_exact(o.at("t"));
      op.mean = vector_from_json(o.at("mean"));
      op.cov = matrix_from_json(o.at("cov"));
      op.filtered = o.at("filtered").get<bool>();
      p.observations.push_back(std::move(op));
    }
    for (const auto& q : j.at("queries")) {
      QueryPrediction qp;
      qp.t = parse_exact(q.at("t"));
      qp.mean = vector_from_json(q.at("mean"));
      qp.cov = matrix_from_json(q.at("cov"));
      qp.interval = q.at("interval").get<int>();
      p.queries.push_back(std::move(qp));
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed predictions: ") + e.what());
  }
  return p;
}

void write_predictions(const std::filesystem::path& path, const Predictions& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : p) out << to_json(t).dump() << '\n';
}

Predictions read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Predictions out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trajectory_predictions_from_json(Json::parse(line)));
    } catch (const Json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Predictions predict_observations(const NesdeModel& model, const Dataset& data, const EvalWindow& window,
                                 const std::vector<double>& query_times, int threads) {
  Predictions out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i, std::size_t) {
    const Trajectory& traj = data[i];
    std::vector<bool> filter(traj.obs.size());
    for (std::size_t j = 0; j < traj.obs.size(); ++j) filter[j] = window.filters(traj.obs[j]);
    RunOptions ro;
    ro.filter_obs = &filter;
    SequencePrediction sp = run_sequence(model, traj, query_times, ro);
    TrajectoryPredictions& tp = out[i];
    tp.id = traj.id;
    for (std::size_t j = 0; j < traj.obs.size(); ++j)
      tp.observations.push_back({traj.obs[j].t, sp.observations[j].mean, sp.observations[j].cov, filter[j]});
    tp.queries = std::move(sp.queries);
  });
  return out;
}

Predictions naive_predictions(const Dataset& data, const EvalWindow& window) {
  Predictions out;
  for (const auto& traj : data) {
    TrajectoryPredictions tp;
    tp.id = traj.id;
    const Eigen::Index m = traj.obs.empty() ? 0 : traj.obs.front().y_hat.size();
    VectorXd last = VectorXd::Constant(m, kNaN);
    std::size_t j = 0;
    for (std::size_t i = 0; i < traj.obs.size(); ++i) {
      while (j < i && traj.obs[j].t < traj.obs[i].t - kBoundaryTolerance) {
        if (window.filters(traj.obs[j]))
          for (Eigen::Index c = 0; c < m; ++c)
            if (traj.obs[j].mask[static_cast<std::size_t>(c)]) last(c) = traj.obs[j].y_hat(c);
        ++j;
      }
      tp.observations.push_back({traj.obs[i].t, last, MatrixXd(), window.filters(traj.obs[i])});
    }
    out.push_back(std::move(tp));
  }
  return out;
}

std::vector<std::vector<EventRecord>> score_events(const Dataset& data, const Predictions& preds,
                                                   const EvalWindow& window) {
  check_pairing(data, preds);
  std::vector<std::vector<EventRecord>> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Trajectory& traj = data[i];
    std::vector<int> counts;
    const std::vector<int> last = last_filtered_before(traj, window, &counts);
    for (std::size_t j = 0; j < traj.obs.size(); ++j) {
      const Observation& o = traj.obs[j];
      if (!window.targets(o)) continue;
      const ObservationPrediction& p = preds[i].observations[j];
      if (p.mean.size() != o.y_hat.size())
        throw DataError("trajectory " + std::to_string(traj.id) + ": prediction dimension differs from observation");
      EventRecord e;
      e.k = counts[j];
      e.t = o.t;
      if (last[j] >= 0) e.since_last = o.t - traj.obs[static_cast<std::size_t>(last[j])].t;
      double se = 0.0;
      int used = 0;
      for (std::size_t c = 0; c < o.mask.size(); ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        if (!o.mask[c] || !std::isfinite(p.mean(ci))) continue;
        const double d = o.y_hat(ci) - p.mean(ci);
        se += d * d;
        ++used;
      }
      if (used > 0) e.sq_err = se / used;
      if (p.cov.size() > 0) e.nll = nll_loss<double>(p.mean, p.cov, o.y_hat, o.mask);
      out[i].push_back(e);
    }
  }
  return out;
}

Bootstrap::Bootstrap(std::size_t trajectories, int resamples, unsigned long long seed) : n_(trajectories) {
  if (trajectories == 0 || resamples <= 0) return;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trajectories), 0xb007u};
  std::mt19937_64 rng(seq);
  draws_.resize(static_cast<std::size_t>(resamples));
  for (auto& d : draws_) {
    d.resize(trajectories);
    // Plain modulo of a 64-bit draw keeps the stream independent of the
    // standard library's distribution implementation.
    for (auto& x : d) x = static_cast<std::uint32_t>(rng() % trajectories);
  }
}

Estimate Bootstrap::ratio(const std::vector<double>& num, const std::vector<double>& den) const {
  if (num.size() != n_ || den.size() != n_) throw DimensionError("bootstrap: series length differs from trajectory count");
  const double total = sum_of(den);
  const double value = total > 0.0 ? sum_of(num) / total : kNaN;
  std::vector<double> samples;
  samples.reserve(draws_.size());
  for (const auto& d : draws_) {
    double a = 0.0;
    double b = 0.0;
    for (auto i : d) {
      a += num[i];
      b += den[i];
    }
    samples.push_back(b > 0.0 ? a / b : kNaN);
  }
  return percentile_estimate(value, std::move(samples), static_cast<std::size_t>(total));
}

Estimate Bootstrap::ratio_of_ratios(const std::vector<double>& num_a, const std::vector<double>& den_a,
                                    const std::vector<double>& num_b, const std::vector<double>& den_b) const {
  for (const auto* v : {&num_a, &den_a, &num_b, &den_b})
    if (v->size() != n_) throw DimensionError("bootstrap: series length differs from trajectory count");
  auto ratio = [](double na, double da, double nb, double db) {
    return (da > 0.0 && db > 0.0 && nb != 0.0) ? (na / da) / (nb / db) : kNaN;
  };
  const double value = ratio(sum_of(num_a), sum_of(den_a), sum_of(num_b), sum_of(den_b));
  std::vector<double> samples;
  for (const auto& d : draws_) {
    double s[4] = {0, 0, 0, 0};
    for (auto i : d) {
      s[0] += num_a[i];
      s[1] += den_a[i];
      s[2] += num_b[i];
      s[3] += den_b[i];
    }
    samples.push_back(ratio(s[0], s[1], s[2], s[3]));
  }
  return percentile_estimate(value, std::move(samples), static_cast<std::size_t>(sum_of(den_a) + sum_of(den_b)));
}

const MetricRow& MetricReport::at(const std::string& metric, const std::string& split, const std::string& x) const {
  for (const auto& r : rows)
    if (r.metric == metric && r.split == split && r.x == x) return r;
  throw std::out_of_range("no metric row " + metric + "/" + split + "/" + x);
}

void MetricReport::append(const MetricReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  for (const auto& [k, v] : other.info.items()) info[k] = v;
}

Json to_json(const MetricReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"metric", row.metric},
                    {"split", row.split},
                    {"x", row.x},
                    {"value", format_exact(row.value)},
                    {"ci_low", format_exact(row.ci_low)},
                    {"ci_high", format_exact(row.ci_high)},
                    {"n", row.n}});
  return {{"rows", rows}, {"info", r.info}};
}

std::string to_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << "metric,split,x,value,ci_low,ci_high,n\n";
  for (const auto& r : rows)
    out << r.metric << ',' << r.split << ',' << r.x << ',' << format_exact(r.value) << ',' << format_exact(r.ci_low)
        << ',' << format_exact(r.ci_high) << ',' << r.n << '\n';
  return out.str();
}

void write_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv(rows);
}

MetricReport metrics_from_predictions(const Dataset& data, const Predictions& preds, const EvalWindow& window,
                                      const std::string& split, const EvalOptions& opts) {
  const auto events = score_events(data, preds, window);
  MetricReport r = report_from(accumulate(events, opts), split, opts);
  for (const auto& row : r.rows)
    if (row.metric != "missing" && !std::isfinite(row.value))
      throw NumericalError("metric " + row.metric + " (" + split + ") is not finite");
  return r;
}

MetricReport evaluate_model(const NesdeModel& model, const Dataset& data, const EvalWindow& window,
                            const std::string& split, const EvalOptions& opts) {
  return metrics_from_predictions(data, predict_observations(model, data, window, {}, opts.threads), window, split,
                                  opts);
}

MetricReport evaluate_naive(const Dataset& data, const EvalWindow& window, const std::string& split,
                            const EvalOptions& opts) {
  return metrics_from_predictions(data, naive_predictions(data, window), window, split, opts);
}

MetricReport evaluate_ood(const NesdeModel& model, const Dataset& sd, const Dataset& ood, const EvalOptions& opts) {
  if (sd.size() != ood.size()) throw DataError("ood evaluation: sd and ood sets differ in size");
  const EvalWindow w = EvalWindow::standard();
  const auto acc_sd = accumulate(score_events(sd, predict_observations(model, sd, w, {}, opts.threads), w), opts);
  const auto acc_ood = accumulate(score_events(ood, predict_observations(model, ood, w, {}, opts.threads), w), opts);
  MetricReport r = report_from(acc_sd, "sd", opts);
  r.append(report_from(acc_ood, "ood", opts));
  const auto* a = acc_ood.find(key_of("mse", ""));
  const auto* b = acc_sd.find(key_of("mse", ""));
  if (a == nullptr || b == nullptr) throw DataError("ood evaluation: no scored events");
  const Bootstrap boot(sd.size(), opts.resamples, opts.seed);
  const Estimate e = boot.ratio_of_ratios(a->first, a->second, b->first, b->second);
  r.rows.push_back({"ood_ratio", "ood", "", e.value, e.low, e.high, e.n});
  r.info["trajectories"] = sd.size();
  return r;
}

MetricReport evaluate_forecast(const NesdeModel& model, const Dataset& data, double split, const EvalOptions& opts) {
  MetricReport r = prefixed(evaluate_model(model, data, EvalWindow::forecast(split), "test", opts), "protocol_");
  // Prior-only predictions have k = 0 everywhere; their error is reported
  // through the nll rows and a dedicated mse over the same targets.
  const EvalWindow prior = EvalWindow::prior_only(split);
  const auto events = score_events(data, predict_observations(model, data, prior, {}, opts.threads), prior);
  Accumulator acc;
  acc.trajectories = data.size();
  for (std::size_t i = 0; i < events.size(); ++i)
    for (const auto& e : events[i]) {
      if (std::isfinite(e.nll)) acc.add(key_of("nll", ""), i, e.nll);
      if (std::isfinite(e.sq_err)) acc.add(key_of("mse", ""), i, e.sq_err);
    }
  r.append(prefixed(report_from(acc, "test", opts), "prior_only_"));
  r.append(prefixed(evaluate_naive(data, EvalWindow::forecast(split), "test", opts), "naive_"));
  r.info["forecast_split"] = split;
  return r;
}

std::string eigen_class(const std::vector<SpectrumComponent>& components) {
  double re = 0.0;
  double im = 0.0;
  double count = 0.0;
  for (const auto& c : components) {
    if (c.kind != "pair" || c.count == 0) continue;
    const auto w = static_cast<double>(c.count);
    re += w * c.re_mean;
    im += w * std::abs(c.im_mean);
    count += w;
  }
  if (count == 0.0) return "real";
  re /= count;
  im /= count;
  if (im < 0.05) return "real";
  if (std::abs(re) < 0.1 * im) return "imaginary";
  return "complex";
}

SpectrumSummary inspect_spectrum(const NesdeModel& model, const Dataset& data, int threads) {
  std::vector<SequencePrediction> runs(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i, std::size_t) {
    RunOptions ro;
    ro.record_intervals = true;
    runs[i] = run_sequence(model, data[i], {}, ro);
  });
  SpectrumSummary s;
  std::vector<std::vector<double>> re;
  std::vector<std::vector<double>> im;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::vector<double> tre;
    std::vector<double> tim;
    std::size_t intervals = 0;
    for (const auto& rec : runs[i].intervals) {
      const auto& entries = rec.dynamics.spectrum.entries;
      if (s.components.empty()) {
        for (std::size_t e = 0; e < entries.size(); ++e)
          s.components.push_back({entries[e].is_pair() ? "pair" : "real", static_cast<int>(e), 0, 0, 0, 0, 0});
        re.resize(entries.size());
        im.resize(entries.size());
      }
      if (tre.empty()) {
        tre.assign(entries.size(), 0.0);
        tim.assign(entries.size(), 0.0);
      }
      for (std::size_t e = 0; e < entries.size(); ++e) {
        re[e].push_back(entries[e].a);
        im[e].push_back(entries[e].b);
        tre[e] += entries[e].a;
        tim[e] += entries[e].b;
      }
      ++intervals;
    }
    Json comps = Json::array();
    for (std::size_t e = 0; e < tre.size() && intervals > 0; ++e)
      comps.push_back({{"re", tre[e] / static_cast<double>(intervals)}, {"im", tim[e] / static_cast<double>(intervals)}});
    s.per_trajectory.push_back({{"id", data[i].id}, {"intervals", intervals}, {"components", comps}});
  }
  auto stats = [](const std::vector<double>& v, double* mean, double* sd) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    *mean = m;
    *sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  for (std::size_t e = 0; e < s.components.size(); ++e) {
    auto& c = s.components[e];
    c.count = re[e].size();
    stats(re[e], &c.re_mean, &c.re_std);
    stats(im[e], &c.im_mean, &c.im_std);
  }
  s.label = eigen_class(s.components);
  return s;
}

Json to_json(const SpectrumSummary& s) {
  return {{"label", s.label}, {"components", components_json(s.components)}, {"per_trajectory", s.per_trajectory}};
}

std::vector<MetricRow> spectrum_rows(const SpectrumSummary& s, const std::string& split) {
  std::vector<MetricRow> rows;
  for (const auto& c : s.components) {
    const std::string x = c.kind + std::to_string(c.index);
    rows.push_back({"eig_re", split, x, c.re_mean, c.re_mean - 1.96 * c.re_std, c.re_mean + 1.96 * c.re_std, c.count});
    rows.push_back({"eig_re_std", split, x, c.re_std, c.re_std, c.re_std, c.count});
    if (c.kind == "pair") {
      rows.push_back({"eig_im", split, x, c.im_mean, c.im_mean - 1.96 * c.im_std, c.im_mean + 1.96 * c.im_std, c.count});
      rows.push_back({"eig_im_std", split, x, c.im_std, c.im_std, c.im_std, c.count});
    }
  }
  return rows;
}

int epochs_for_steps(long steps, std::size_t train_size, int batch_size) {
  if (train_size == 0 || batch_size <= 0) throw ConfigError("epochs_for_steps: empty training set or batch size");
  const long per_epoch = static_cast<long>((train_size + static_cast<std::size_t>(batch_size) - 1) /
                                           static_cast<std::size_t>(batch_size));
  return static_cast<int>(std::max(1L, (steps + per_epoch - 1) / per_epoch));
}

std::vector<int> mode_candidates(int n) {
  if (n < 2) return {0};
  return {0, n / 2};
}

SelectionResult train_selected(const NesdeConfig& config, const std::vector<int>& pair_counts, int restarts,
                               unsigned long long seed, const Dataset& train_set, const Dataset& val_set,
                               const TrainConfig& cfg) {
  if (pair_counts.empty() || restarts < 1) throw ConfigError("model selection: no candidates");
  SelectionResult out;
  bool have = false;
  for (int pairs : pair_counts)
    for (int r = 0; r < restarts; ++r) {
      NesdeConfig c = config;
      c.n_complex_pairs = pairs;
      c.validate();
      const unsigned long long s = seed + static_cast<unsigned long long>(r);
      TrainConfig tc = cfg;
      tc.seed = s;
      Checkpoint ck = train(NesdeModel::initialized(c, s), train_set, val_set, tc);
      out.candidates.push_back({{"complex_pairs", pairs}, {"init_seed", s}, {"best_val_nll", ck.best_val_nll}});
      if (!have || ck.best_val_nll < out.best.best_val_nll) {
        out.best = std::move(ck);
        out.complex_pairs = pairs;
        out.init_seed = s;
        have = true;
      }
    }
  return out;
}

MetricReport train_size_sweep(const NesdeConfig& config, const TrainConfig& cfg, const SweepOptions& sweep,
                              unsigned long long seed, const Dataset& train_set, const Dataset& val_set,
                              const Dataset& test_set, const EvalOptions& opts) {
  MetricReport out;
  Json runs = Json::array();
  for (int size : sweep.sizes) {
    if (size <= 0 || static_cast<std::size_t>(size) > train_set.size())
      throw ConfigError("sweep size " + std::to_string(size) + " exceeds the " + std::to_string(train_set.size()) +
                        " available training trajectories");
    const Dataset subset(train_set.begin(), train_set.begin() + size);
    TrainConfig tc = cfg;
    tc.epochs = epochs_for_steps(sweep.steps, subset.size(), cfg.batch_size);
    const SelectionResult sel = train_selected(config, sweep.pair_counts, sweep.restarts, seed, subset, val_set, tc);
    const std::string x = std::to_string(size);
    const MetricReport std_report = evaluate_model(sel.best.best, test_set, EvalWindow::standard(), "test", opts);
    for (auto row : std_report.rows)
      if (row.x.empty() && (row.metric == "nll" || row.metric == "mse")) {
        row.metric = "test_" + row.metric;
        row.x = x;
        out.rows.push_back(row);
      }
    if (std::isfinite(sweep.forecast_split)) {
      const MetricReport f = evaluate_forecast(sel.best.best, test_set, sweep.forecast_split, opts);
      for (auto row : f.rows)
        if (row.x.empty()) {
          row.x = x;
          out.rows.push_back(row);
        }
    }
    runs.push_back({{"size", size},
                    {"epochs", tc.epochs},
                    {"complex_pairs", sel.complex_pairs},
                    {"init_seed", sel.init_seed},
                    {"candidates", sel.candidates}});
  }
  out.info["sweep"] = runs;
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

Json build_versions() {
  return {{"nesde", NESDE_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__},
          {"checkpoint_format", kCheckpointFormatVersion}};
}

Json Manifest::to_json() const {
  auto files = [](const std::vector<std::filesystem::path>& paths) {
    Json out = Json::array();
    for (const auto& p : paths) out.push_back({{"name", p.filename().string()}, {"sha256", sha256_file(p)}});
    return out;
  };
  return {{"command", command},
          {"seed", seed},
          {"config", config},
          {"config_sha256", sha256_hex(config.dump())},
          {"inputs", files(inputs)},
          {"outputs", files(outputs)},
          {"versions", build_versions()}};
}

void Manifest::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const Json j = to_json();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace nesde
