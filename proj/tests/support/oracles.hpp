#pragma once

// Reference computations used by the tests. Everything here works on dense
// operators and is written independently of the library's spectral code.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>

#include "nesde/solver.hpp"
#include "nesde/spectral.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Matrix exponential by scaling and squaring of a degree-24 Taylor series.
inline MatrixXd expm(const MatrixXd& a) {
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm > 0.5) s = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const MatrixXd x = a / std::ldexp(1.0, s);
  MatrixXd term = MatrixXd::Identity(a.rows(), a.cols());
  MatrixXd sum = term;
  for (int k = 1; k <= 24; ++k) {
    term = term * x / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

/// Block-diagonal generator of a spectrum: [r] or [[a, b], [-b, a]].
inline MatrixXd block_generator(const nesde::Spectrum& s) {
  const int n = s.dim();
  MatrixXd d = MatrixXd::Zero(n, n);
  int i = 0;
  for (const auto& e : s.entries) {
    if (e.is_pair()) {
      d(i, i) = e.a;
      d(i + 1, i + 1) = e.a;
      d(i, i + 1) = e.b;
      d(i + 1, i) = -e.b;
      i += 2;
    } else {
      d(i, i) = e.a;
      i += 1;
    }
  }
  return d;
}

inline MatrixXd dense_operator(const nesde::SpectralDynamics& dyn) {
  return dyn.basis.V * block_generator(dyn.spectrum) * dyn.basis.V.fullPivLu().inverse();
}

/// F = e^{Ah} and W = int_0^h e^{As} Q e^{A^T s} ds (Van Loan).
struct Transition {
  MatrixXd F;
  MatrixXd W;
  MatrixXd G;  // int_0^h e^{As} ds
};

inline Transition transition(const MatrixXd& a, const MatrixXd& q, double h) {
  const auto n = a.rows();
  MatrixXd m = MatrixXd::Zero(2 * n, 2 * n);
  m.topLeftCorner(n, n) = -a * h;
  m.topRightCorner(n, n) = q * h;
  m.bottomRightCorner(n, n) = a.transpose() * h;
  const MatrixXd e = expm(m);
  Transition t;
  t.F = e.bottomRightCorner(n, n).transpose();
  t.W = t.F * e.topRightCorner(n, n);
  t.W = 0.5 * (t.W + t.W.transpose());
  MatrixXd g = MatrixXd::Zero(2 * n, 2 * n);
  g.topLeftCorner(n, n) = a * h;
  g.topRightCorner(n, n) = MatrixXd::Identity(n, n) * h;
  t.G = expm(g).topRightCorner(n, n);
  return t;
}

struct Moments {
  VectorXd mu;
  MatrixXd sigma;
};

/// Exact moments of the shifted state under piecewise-constant control.
inline Moments exact_moments(const nesde::SpectralDynamics& dyn, const nesde::GaussianBelief& b,
                             const nesde::ControlSignal& u, double t1) {
  const MatrixXd a = dense_operator(dyn);
  Moments m{b.mu, b.sigma};
  for (const auto& p : u.pieces(b.t, t1)) {
    const Transition tr = transition(a, dyn.Q, p.t1 - p.t0);
    m.mu = tr.F * m.mu;
    if (p.u != nullptr) m.mu += tr.G * dyn.B * *p.u;
    m.sigma = tr.F * m.sigma * tr.F.transpose() + tr.W;
  }
  return m;
}

/// Classical RK4 on dmu/dt = A mu + B u, dSigma/dt = A Sigma + Sigma A^T + Q,
/// restarted at every control breakpoint.
inline Moments rk4_moments(const nesde::SpectralDynamics& dyn, const nesde::GaussianBelief& b,
                           const nesde::ControlSignal& u, double t1, double dt) {
  const MatrixXd a = dense_operator(dyn);
  const auto n = a.rows();
  Moments m{b.mu, b.sigma};
  for (const auto& p : u.pieces(b.t, t1)) {
    const VectorXd drive = p.u != nullptr ? VectorXd(dyn.B * *p.u) : VectorXd::Zero(n);
    const int steps = std::max(1, static_cast<int>(std::ceil((p.t1 - p.t0) / dt)));
    const double h = (p.t1 - p.t0) / steps;
    auto fm = [&](const VectorXd& x) -> VectorXd { return a * x + drive; };
    auto fs = [&](const MatrixXd& s) -> MatrixXd { return a * s + s * a.transpose() + dyn.Q; };
    for (int i = 0; i < steps; ++i) {
      const VectorXd k1 = fm(m.mu);
      const VectorXd k2 = fm(m.mu + 0.5 * h * k1);
      const VectorXd k3 = fm(m.mu + 0.5 * h * k2);
      const VectorXd k4 = fm(m.mu + h * k3);
      m.mu += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      const MatrixXd s1 = fs(m.sigma);
      const MatrixXd s2 = fs(m.sigma + 0.5 * h * s1);
      const MatrixXd s3 = fs(m.sigma + 0.5 * h * s2);
      const MatrixXd s4 = fs(m.sigma + h * s3);
      m.sigma += h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
    }
  }
  return m;
}

/// xoshiro256++; fast enough for hundreds of millions of normal draws.
class Xoshiro {
 public:
  using result_type = std::uint64_t;
  explicit Xoshiro(std::uint64_t seed) {
    std::uint64_t z = seed;
    for (auto& x : s_) {
      z += 0x9e3779b97f4a7c15ULL;
      std::uint64_t r = z;
      r = (r ^ (r >> 30)) * 0xbf58476d1ce4e5b9ULL;
      r = (r ^ (r >> 27)) * 0x94d049bb133111ebULL;
      x = r ^ (r >> 31);
    }
  }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    const std::uint64_t r = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return r;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

/// Lower factor of a PSD matrix through its eigendecomposition.
inline MatrixXd psd_sqrt(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
  const VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

namespace detail {

template <int N>
Moments em_fixed(const MatrixXd& a_dyn, const MatrixXd& b_dyn, const MatrixXd& q, const VectorXd& alpha,
                 const nesde::GaussianBelief& b0, const nesde::ControlSignal& u, double t1, double dt, long paths,
                 std::uint64_t seed) {
  using V = Eigen::Matrix<double, N, 1>;
  using M = Eigen::Matrix<double, N, N>;
  const M root = M(psd_sqrt(q));
  const M init = M(psd_sqrt(b0.sigma));
  const V mu0 = V(b0.mu + alpha);
  const V pull = V(-a_dyn * alpha);
  struct Seg {
    long steps;
    M st;
    M ns;
    V dr;
  };
  std::vector<Seg> segs;
  for (const auto& p : u.pieces(b0.t, t1)) {
    const long steps = std::max(1L, std::lround((p.t1 - p.t0) / dt));
    V drift = pull;
    if (p.u != nullptr) drift += V(b_dyn * *p.u);
    // Steps are rescaled so each piece ends exactly on its breakpoint.
    const double h = (p.t1 - p.t0) / static_cast<double>(steps);
    segs.push_back({steps, M(M::Identity() + M(a_dyn) * h), M(root * std::sqrt(h)), V(drift * h)});
  }
  Xoshiro rng(seed);
  boost::random::normal_distribution<double> normal;
  V sum = V::Zero();
  M outer = M::Zero();
  for (long p = 0; p < paths; ++p) {
    V xi;
    for (int i = 0; i < N; ++i) xi(i) = normal(rng);
    V x = mu0 + init * xi;
    for (const auto& s : segs)
      for (long k = 0; k < s.steps; ++k) {
        for (int i = 0; i < N; ++i) xi(i) = normal(rng);
        x = s.st * x + s.dr + s.ns * xi;
      }
    sum += x;
    outer += x * x.transpose();
  }
  const double np = static_cast<double>(paths);
  Moments m;
  const V mean = sum / np;
  m.mu = mean;
  m.sigma = (outer - np * mean * mean.transpose()) / (np - 1.0);
  return m;
}

}  // namespace detail

/// Euler-Maruyama Monte-Carlo moments of the raw state X of
///   dX = [A (X - alpha) + B u] dt + dW,  X(t0) ~ N(b.mu + alpha, b.sigma).
inline Moments em_moments(const nesde::SpectralDynamics& dyn, const nesde::GaussianBelief& b,
                          const nesde::ControlSignal& u, double t1, double dt, long paths, std::uint64_t seed) {
  const MatrixXd a = dense_operator(dyn);
  const VectorXd alpha = dyn.alpha.size() == dyn.state_dim() ? dyn.alpha : VectorXd::Zero(dyn.state_dim());
  switch (dyn.state_dim()) {
    case 1:
      return detail::em_fixed<1>(a, dyn.B, dyn.Q, alpha, b, u, t1, dt, paths, seed);
    case 2:
      return detail::em_fixed<2>(a, dyn.B, dyn.Q, alpha, b, u, t1, dt, paths, seed);
    case 3:
      return detail::em_fixed<3>(a, dyn.B, dyn.Q, alpha, b, u, t1, dt, paths, seed);
    case 4:
      return detail::em_fixed<4>(a, dyn.B, dyn.Q, alpha, b, u, t1, dt, paths, seed);
    default:
      break;
  }
  throw std::invalid_argument("em_moments: n must be 1..4");
}

inline MatrixXd random_spd(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> nd;
  MatrixXd l = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) l(i, j) = nd(rng) * (i == j ? 1.0 : 0.5);
  return scale * (l * l.transpose() + 0.1 * MatrixXd::Identity(n, n));
}

/// Random stable dynamics with `pairs` complex pairs; eigenvalue magnitudes
/// are multiplied by `rate_scale`.
inline nesde::SpectralDynamics random_dynamics(std::mt19937_64& rng, int n, int pairs, int k, int m,
                                               double rate_scale = 1.0) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> nd;
  nesde::SpectralDynamics d;
  for (int p = 0; p < pairs; ++p)
    d.spectrum.entries.push_back(nesde::SpectrumEntry<double>::complex_pair(-(0.2 + 1.8 * unif(rng)) * rate_scale,
                                                                            (0.5 + 2.5 * unif(rng)) * rate_scale));
  for (int r = 0; r < n - 2 * pairs; ++r)
    d.spectrum.entries.push_back(nesde::SpectrumEntry<double>::real(-(0.2 + 1.8 * unif(rng)) * rate_scale));
  MatrixXd v = MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) v(i, j) += 0.4 * nd(rng);
  d.basis.V = nesde::normalize_basis_columns<double>(d.spectrum, v);
  d.Q = random_spd(rng, n, 0.2 * rate_scale);
  d.B = MatrixXd::Zero(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) d.B(i, j) = nd(rng) * rate_scale;
  d.alpha = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) d.alpha(i) = nd(rng);
  d.R = random_spd(rng, m, 0.05);
  return d;
}

/// Central finite difference of a scalar function along coordinate i.
inline double central_difference(const std::function<double(const VectorXd&)>& f, VectorXd x, Eigen::Index i,
                                 double h) {
  const double x0 = x(i);
  x(i) = x0 + h;
  const double fp = f(x);
  x(i) = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

/// Relative error |a - b| / max(|b|, floor).
inline double rel_err(double a, double b, double floor = 1e-12) { return std::abs(a - b) / std::max(std::abs(b), floor); }

/// Max entrywise error normalized by the scale of the reference matrix.
inline double rel_err(const MatrixXd& a, const MatrixXd& b, double floor = 1e-12) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

}  // namespace oracle
