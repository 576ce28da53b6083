#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "nesde/datagen.hpp"
#include "nesde/harness.hpp"
#include "support/oracles.hpp"

using namespace nesde;
namespace fs = std::filesystem;

namespace {

Trajectory scalar_traj(long id, const std::vector<std::pair<double, double>>& obs) {
  Trajectory t;
  t.id = id;
  t.context = VectorXd(0);
  t.control = ControlSignal(1);
  for (const auto& [time, y] : obs) {
    Observation o;
    o.t = time;
    o.y_hat = VectorXd::Constant(1, y);
    o.mask = {true};
    t.obs.push_back(o);
  }
  return t;
}

Dataset hand_dataset() {
  return {scalar_traj(0, {{1.0, 1.0}, {2.0, 3.0}, {3.0, 2.0}}), scalar_traj(1, {{0.5, 0.0}, {1.5, -2.0}}),
          scalar_traj(2, {{1.0, 5.0}})};
}

SpectralDynamics a1_dynamics(double q, double r) {
  SpectralDynamics d;
  const SpectralDecomposition dec = spectrum_of_operator(benchmark_operator("A1"));
  d.spectrum = dec.spectrum;
  d.basis = dec.basis;
  d.Q = q * MatrixXd::Identity(2, 2);
  d.B = MatrixXd::Zero(2, 1);
  d.alpha = VectorXd::Zero(2);
  d.R = r * MatrixXd::Identity(2, 2);
  return d;
}

/// Noiseless, fully observed A1 trajectories.
Dataset a1_dataset(int count, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> gap(0.2, 1.0);
  Dataset out;
  for (int i = 0; i < count; ++i) {
    Trajectory t;
    t.id = i;
    t.context = VectorXd(0);
    t.control = ControlSignal(1);
    VectorXd x = Eigen::Vector2d(nd(rng), nd(rng));
    double now = 0.0;
    for (int j = 0; j < 6; ++j) {
      const double h = gap(rng);
      x = oracle::expm(benchmark_operator("A1") * h) * x;
      now += h;
      Observation o;
      o.t = now;
      o.y_hat = x;
      o.mask = {true, true};
      t.obs.push_back(o);
    }
    out.push_back(t);
  }
  return out;
}

NesdeModel a1_model(double q, double r) {
  NesdeConfig c;
  c.n = 2;
  c.m = 2;
  c.k = 1;
  c.n_complex_pairs = 1;
  GaussianBelief b0;
  b0.mu = VectorXd::Zero(2);
  b0.sigma = 4.0 * MatrixXd::Identity(2, 2);
  return NesdeModel::from_fixed_dynamics(c, a1_dynamics(q, r), b0);
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("naive baseline on hand-computed trajectories") {
    const Dataset d = hand_dataset();
    const Predictions p = naive_predictions(d, EvalWindow::standard());
    CHECK(std::isnan(p[0].observations[0].mean(0)));
    CHECK(p[0].observations[1].mean(0) == 1.0);
    CHECK(p[0].observations[2].mean(0) == 3.0);
    CHECK(p[1].observations[1].mean(0) == 0.0);
    EvalOptions eo;
    eo.resamples = 50;
    const MetricReport r = metrics_from_predictions(d, p, EvalWindow::standard(), "test", eo);
    // Errors 4, 1 and 4 at events with an earlier observation.
    CHECK(r.at("mse", "test").value == doctest::Approx(3.0));
    CHECK(r.at("mse", "test").n == 3);
    CHECK(r.at("mse_k", "test", "1").value == doctest::Approx(4.0));
    CHECK(r.at("mse_k", "test", "2").value == doctest::Approx(1.0));
  }

  TEST_CASE("naive baseline holds its value after one observation") {
    const Dataset d = {scalar_traj(0, {{1.0, 2.5}})};
    EvalWindow w = EvalWindow::forecast(1.5);
    Dataset longer = {scalar_traj(0, {{1.0, 2.5}, {2.0, 7.0}, {3.0, -1.0}, {8.0, 0.0}})};
    const Predictions p = naive_predictions(longer, w);
    for (std::size_t i = 1; i < 4; ++i) CHECK(p[0].observations[i].mean(0) == 2.5);
    CHECK_FALSE(p[0].observations[1].filtered);
    CHECK(p[0].observations[0].filtered);
    (void)d;
  }

  TEST_CASE("true dynamics predict noiseless data almost exactly") {
    const Dataset d = a1_dataset(20, 1);
    EvalOptions eo;
    eo.resamples = 50;
    const MetricReport model = evaluate_model(a1_model(0.0, 0.0), d, EvalWindow::standard(), "test", eo);
    const MetricReport naive = evaluate_naive(d, EvalWindow::standard(), "test", eo);
    CHECK(model.at("mse", "test").value < 1e-8);
    CHECK(naive.at("mse", "test").value > 100.0 * model.at("mse", "test").value);
  }

  TEST_CASE("true dynamics beat naive on noisy data") {
    BenchmarkSpec s = BenchmarkSpec::defaults_for("controlled-complex");
    s.n_trajectories = 60;
    s.seed = 3;
    s.truth_dt = 0.0;
    s.policy = "none";
    const Dataset d = make_benchmark(s);
    const LinearGenerator g = benchmark_generator(s);
    SpectralDynamics dyn;
    const SpectralDecomposition dec = spectrum_of_operator(g.A);
    dyn.spectrum = dec.spectrum;
    dyn.basis = dec.basis;
    dyn.Q = g.Q;
    dyn.B = g.B;
    dyn.alpha = VectorXd::Zero(2);
    dyn.R = MatrixXd::Constant(1, 1, 1e-6);
    NesdeConfig c;
    c.n = 2;
    c.m = 1;
    c.k = 1;
    c.n_complex_pairs = 1;
    GaussianBelief b0;
    b0.mu = VectorXd::Zero(2);
    b0.sigma = s.x0_std * s.x0_std * MatrixXd::Identity(2, 2);
    const NesdeModel truth = NesdeModel::from_fixed_dynamics(c, dyn, b0);
    EvalOptions eo;
    eo.resamples = 50;
    const double m = evaluate_model(truth, d, EvalWindow::standard(), "test", eo).at("mse", "test").value;
    const double n = evaluate_naive(d, EvalWindow::standard(), "test", eo).at("mse", "test").value;
    CHECK(m < n);
  }

  TEST_CASE("bootstrap is seeded and covers the estimate") {
    std::vector<double> num;
    std::vector<double> den;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(2.0, 1.0);
    for (int i = 0; i < 200; ++i) {
      num.push_back(nd(rng));
      den.push_back(1.0);
    }
    const Bootstrap a(200, 1000, 7);
    const Bootstrap b(200, 1000, 7);
    const Estimate ea = a.ratio(num, den);
    const Estimate eb = b.ratio(num, den);
    CHECK(ea.low == eb.low);
    CHECK(ea.high == eb.high);
    CHECK(ea.low < ea.value);
    CHECK(ea.value < ea.high);
    // Width near 2 * 1.96 / sqrt(200).
    CHECK(ea.high - ea.low == doctest::Approx(2 * 1.96 / std::sqrt(200.0)).epsilon(0.2));
    const Estimate same = a.ratio_of_ratios(num, den, num, den);
    CHECK(same.value == doctest::Approx(1.0));
    CHECK(same.low == doctest::Approx(1.0));
  }

  TEST_CASE("csv schema") {
    MetricReport r;
    r.rows.push_back({"mse", "test", "", 0.5, 0.4, 0.6, 10});
    r.rows.push_back({"mse_k", "test", "3", 0.25, 0.2, 0.3, 7});
    const std::string csv = to_csv(r.rows);
    CHECK(csv.rfind("metric,split,x,value,ci_low,ci_high,n\n", 0) == 0);
    CHECK(csv.find("mse_k,test,3,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK_THROWS(r.at("nll", "test"));
  }

  TEST_CASE("rescoring saved predictions is idempotent") {
    const Dataset d = a1_dataset(15, 5);
    const NesdeModel m = a1_model(0.05, 0.05);
    const Predictions p = predict_observations(m, d, EvalWindow::standard(), {0.5, 2.0});
    const fs::path path = fs::temp_directory_path() / "nesde_harness_predictions.jsonl";
    write_predictions(path, p);
    const Predictions back = read_predictions(path);
    fs::remove(path);
    EvalOptions eo;
    eo.resamples = 100;
    const MetricReport a = metrics_from_predictions(d, p, EvalWindow::standard(), "test", eo);
    const MetricReport b = metrics_from_predictions(d, back, EvalWindow::standard(), "test", eo);
    CHECK(to_csv(a.rows) == to_csv(b.rows));
    const MetricReport direct = evaluate_model(m, d, EvalWindow::standard(), "test", eo);
    CHECK(to_csv(direct.rows) == to_csv(a.rows));
    CHECK(back[0].queries.size() == 2);
  }

  TEST_CASE("mismatched predictions are rejected") {
    const Dataset d = hand_dataset();
    Predictions p = naive_predictions(d, EvalWindow::standard());
    p.pop_back();
    CHECK_THROWS_AS(score_events(d, p, EvalWindow::standard()), DataError);
  }

  TEST_CASE("eigen class rules") {
    auto pair = [](double re, double im) {
      SpectrumComponent c;
      c.kind = "pair";
      c.re_mean = re;
      c.im_mean = im;
      c.count = 1;
      return c;
    };
    SpectrumComponent real;
    real.kind = "real";
    real.re_mean = -0.5;
    real.count = 1;
    CHECK(eigen_class({real, real}) == "real");
    CHECK(eigen_class({pair(-0.5, 0.01)}) == "real");
    CHECK(eigen_class({pair(-0.05, 1.0)}) == "imaginary");
    CHECK(eigen_class({pair(-0.75, 1.98)}) == "complex");
    CHECK(eigen_class({pair(-0.2, 1.0)}) == "complex");
  }

  TEST_CASE("spectrum inspection of the true model") {
    const Dataset d = a1_dataset(5, 6);
    const SpectrumSummary s = inspect_spectrum(a1_model(0.05, 0.05), d);
    REQUIRE(s.components.size() == 1);
    CHECK(s.components[0].re_mean == doctest::Approx(-0.75));
    CHECK(s.components[0].im_mean == doctest::Approx(std::sqrt(3.9375)));
    CHECK(s.components[0].re_std < 1e-9);
    CHECK(s.label == "complex");
    CHECK(spectrum_rows(s, "test").size() == 4);
  }

  TEST_CASE("ood report rows") {
    BenchmarkSpec s = BenchmarkSpec::defaults_for("controlled-complex");
    s.n_trajectories = 12;
    s.truth_dt = 0.0;
    BenchmarkSpec o = s;
    o.policy = "ood";
    NesdeConfig c;
    c.n = 2;
    c.m = 1;
    c.k = 1;
    c.n_complex_pairs = 1;
    EvalOptions eo;
    eo.resamples = 50;
    const MetricReport r = evaluate_ood(NesdeModel::initialized(c, 1), make_benchmark(s), make_benchmark(o), eo);
    const double ratio = r.at("ood_ratio", "ood").value;
    CHECK(ratio == doctest::Approx(r.at("mse", "ood").value / r.at("mse", "sd").value));
    CHECK(r.at("ood_ratio", "ood").ci_low <= ratio);
    CHECK_THROWS(evaluate_ood(NesdeModel::initialized(c, 1), make_benchmark(s), Dataset(), eo));
  }

  TEST_CASE("forecast windows") {
    const Dataset d = a1_dataset(10, 7);
    EvalOptions eo;
    eo.resamples = 50;
    const MetricReport r = evaluate_forecast(a1_model(0.05, 0.05), d, 2.0, eo);
    CHECK(r.at("protocol_mse", "test").value < r.at("prior_only_mse", "test").value);
    CHECK(r.at("protocol_nll", "test").value < r.at("prior_only_nll", "test").value);
    CHECK_NOTHROW(r.at("naive_mse", "test"));
    const EvalWindow w = EvalWindow::forecast(2.0);
    Observation early;
    early.t = 1.0;
    Observation late;
    late.t = 3.0;
    CHECK(w.filters(early));
    CHECK_FALSE(w.filters(late));
    CHECK(w.targets(late));
    CHECK_FALSE(w.targets(early));
  }

  TEST_CASE("epochs for a step budget and mode candidates") {
    CHECK(epochs_for_steps(2000, 50, 32) == 1000);
    CHECK(epochs_for_steps(2000, 400, 32) == 154);
    CHECK(mode_candidates(1) == std::vector<int>{0});
    CHECK(mode_candidates(4) == std::vector<int>{0, 2});
  }

  TEST_CASE("sha256 test vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("manifests are reproducible") {
    const fs::path dir = fs::temp_directory_path() / "nesde_manifest_test";
    fs::create_directories(dir);
    {
      std::ofstream(dir / "input.txt") << "data";
    }
    Manifest m;
    m.command = "evaluate";
    m.seed = 3;
    m.config = {{"a", 1}};
    m.inputs = {dir / "input.txt"};
    m.write(dir / "m1.json");
    m.write(dir / "m2.json");
    const nlohmann::json j = m.to_json();
    CHECK(j["inputs"][0]["name"] == "input.txt");
    CHECK(j["inputs"][0]["sha256"] == sha256_hex("data"));
    CHECK(j.contains("config_sha256"));
    CHECK(j["versions"].contains("eigen"));
    CHECK(sha256_file(dir / "m1.json") == sha256_file(dir / "m2.json"));
    fs::remove_all(dir);
  }
}
