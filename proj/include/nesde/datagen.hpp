#pragma once

// Seeded synthetic benchmark generators.
//
// Ground-truth paths are produced with exact per-step transitions of the
// linear SDE (matrix exponential for the mean, Van Loan for the noise), so
// splitting a step anywhere yields the same law and noiseless runs lie on
// the closed-form path. simulate_linear_sde is a plain Euler-Maruyama
// integrator kept as an independent reference.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "nesde/dataset.hpp"
#include "nesde/types.hpp"

namespace nesde {

/// Control as a function of time and the current state.
using StatePolicy = std::function<VectorXd(double t, const VectorXd& x)>;

struct SdePath {
  std::vector<double> t;
  std::vector<VectorXd> x;
};

/// Euler-Maruyama: x <- x + (A x + c + B u) dt + sqrt(dt) L xi, L L^T = Q.
/// `offset` is the constant drift term c (may be empty). Stores every
/// `store_every`-th step plus the final state. Throws NumericalError for a
/// non-PSD Q.
SdePath simulate_linear_sde(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q, const VectorXd& x0,
                            const StatePolicy& policy, double horizon, double dt, std::mt19937_64& rng,
                            int store_every = 1, const VectorXd& offset = VectorXd());

/// Exact transition of dX = (A X + f) dt + dW, Cov(dW) = Q dt, over h with
/// constant f: X(h) = F X(0) + g + N(0, W).
struct ExactStep {
  MatrixXd F;
  MatrixXd G;  // integral of e^{As} ds, so g = G f
  MatrixXd W;
  MatrixXd W_chol;

  static ExactStep of(const MatrixXd& a, const MatrixXd& q, double h);
  VectorXd apply(const VectorXd& x, const VectorXd& f, std::mt19937_64& rng, bool noisy) const;
};

/// Square root of a PSD matrix suitable for sampling (L L^T = a).
MatrixXd psd_factor(const MatrixXd& a);

struct BenchmarkSpec {
  std::string generator = "controlled-complex";  // controlled-complex | controlled-real | spectrum-A1 | spectrum-A2
                                                 // | spectrum-A3 | oracle | ou2d
  int n_trajectories = 1000;
  int obs_min = 5;
  int obs_max = 20;
  double obs_interval = 0.0;  // > 0: regular observation grid instead of random times
  double obs_rate = 0.0;      // > 0: Poisson observation times with this rate
  double obs_noise = 0.0;     // std of additive observation noise
  std::string policy = "sd";  // sd | ood | none
  double coupling = 0.5;
  double sigma_w = 0.1;
  double horizon = 10.0;
  double control_dt = 0.1;
  int control_segments = 10;
  double b_low = 0.0;
  double b_high = 0.5;
  double x0_std = 1.0;
  double truth_dt = 0.01;  // 0 disables dense truth
  double ou_theta = 1.0;
  double ou_center_low = -2.0;
  double ou_center_high = 2.0;
  double ou_x0_std = 0.70710678118654757;
  bool ou_random_mask = true;
  unsigned long long seed = 0;

  /// Defaults for a generator id; throws ConfigError for an unknown id.
  static BenchmarkSpec defaults_for(const std::string& generator);
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const BenchmarkSpec& s);
/// Starts from defaults_for(generator) and overlays the given fields; unknown
/// keys are rejected.
BenchmarkSpec benchmark_spec_from_json(const nlohmann::json& j);

/// Generator of a benchmark: dX = (A X + offset + B u) dt + dW, Cov = Q.
struct LinearGenerator {
  MatrixXd A;
  MatrixXd B;
  MatrixXd Q;
  int m = 1;  // leading observed coordinates
};

MatrixXd benchmark_operator(const std::string& which);  // "A1", "A2", "A3"
LinearGenerator benchmark_generator(const BenchmarkSpec& spec);

/// Reproducible per-trajectory random stream for one purpose.
std::mt19937_64 derived_stream(unsigned long long seed, unsigned long long index, unsigned long long purpose);

Dataset make_controlled_benchmark(const BenchmarkSpec& spec);
Dataset make_spectrum_benchmark(const BenchmarkSpec& spec);
Dataset make_oracle_benchmark(const BenchmarkSpec& spec);
Dataset make_ou_benchmark(const BenchmarkSpec& spec);
/// Dispatches on spec.generator.
Dataset make_benchmark(const BenchmarkSpec& spec);

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Contiguous split by position with the given train/val fractions.
DatasetSplits split_dataset(const Dataset& data, double train_fraction = 0.6, double val_fraction = 0.1);

}  // namespace nesde
