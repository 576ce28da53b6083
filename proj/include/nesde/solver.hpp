#pragma once

// Closed-form propagation of a Gaussian belief through one interval of
//
//   dX = [A (X - alpha) + B u] dt + dW,   Cov(dW) = Q dt,
//
// with A given spectrally. Beliefs live in the shifted coordinates X - alpha,
// where the drift is homogeneous apart from B u. Over a span of length h with
// constant u, in eigen-coordinates z = V^-1 (X - alpha):
//
//   z(h)     = D(h) z(0) + G(h) V^-1 B u,           G(h) = int_0^h D(s) ds
//   Sigma(h) = V [D(h) P0 D(h)^T + N(h)] V^T,       N(h) = int_0^h D(s) P D(s)^T ds
//
// with P0 = V^-1 Sigma(0) V^-T and P = V^-1 Q V^-T. Only relative times enter,
// which is the stabilized form of the absolute-time expressions.

#include <cmath>
#include <functional>
#include <vector>

#include "nesde/ad.hpp"
#include "nesde/linalg.hpp"
#include "nesde/spectral.hpp"
#include "nesde/types.hpp"

namespace nesde {

/// Below this |z h| the integrals (e^{zh} - 1) / z switch to a 3-term Taylor series.
inline constexpr double kTaylorThreshold = 1e-6;

template <class T>
struct BasicGaussianBelief {
  double t = 0.0;
  Vec<T> mu;     // mean of X - alpha
  Mat<T> sigma;  // covariance

  int dim() const { return static_cast<int>(mu.size()); }
};

using GaussianBelief = BasicGaussianBelief<double>;

GaussianBelief values(const BasicGaussianBelief<ad::Var>& belief);
inline const GaussianBelief& values(const GaussianBelief& belief) { return belief; }

struct ControlSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  VectorXd u;
};

/// Piecewise-constant control. Time not covered by a segment has u = 0.
class ControlSignal {
 public:
  ControlSignal() = default;
  explicit ControlSignal(int dim) : dim_(dim) {}
  ControlSignal(int dim, std::vector<ControlSegment> segments);

  int dim() const { return dim_; }
  const std::vector<ControlSegment>& segments() const { return segments_; }
  bool empty() const { return segments_.empty(); }

  VectorXd value_at(double t) const;

  struct Piece {
    double t0;
    double t1;
    const VectorXd* u;  // nullptr for zero control
  };
  /// Splits [t0, t1] into maximal pieces of constant control, in time order.
  std::vector<Piece> pieces(double t0, double t1) const;

  /// Copy restricted to segments starting before `t` (later ones clipped).
  ControlSignal truncated(double t) const;

 private:
  int dim_ = 0;
  std::vector<ControlSegment> segments_;
};

namespace detail {

/// Minimal complex number over a generic scalar.
template <class T>
struct Cx {
  T re;
  T im;
};

/// (e^{zh} - 1) / z for z = c + i w, with the Taylor branch near z h = 0.
template <class T>
Cx<T> exp_integral(const T& c, const T& w, double h) {
  using std::cos;
  using std::exp;
  using std::expm1;
  using std::sin;
  const double cv = value_of(c);
  const double wv = value_of(w);
  if (std::hypot(cv, wv) * h < kTaylorThreshold) {
    // h + z h^2 / 2 + z^2 h^3 / 6
    const T z2re = c * c - w * w;
    const T z2im = T(2.0) * c * w;
    return {T(h) + c * (h * h / 2.0) + z2re * (h * h * h / 6.0), w * (h * h / 2.0) + z2im * (h * h * h / 6.0)};
  }
  T x = c * h;
  if (value_of(x) > kExponentClamp) x = T(kExponentClamp);
  if (value_of(x) < -kExponentClamp) x = T(-kExponentClamp);
  // e^{x + iy} - 1 = expm1(x) cos y - 2 sin^2(y/2) + i e^x sin y
  if (is_constant_zero(w)) {
    return {expm1(x) / c, T(0.0)};
  }
  const T y = w * h;
  const T half = sin(y * 0.5);
  const T num_re = expm1(x) * cos(y) - T(2.0) * half * half;
  const T num_im = exp(x) * sin(y);
  const T den = c * c + w * w;
  // (num_re + i num_im) / (c + i w)
  return {(num_re * c + num_im * w) / den, (num_im * c - num_re * w) / den};
}

}  // namespace detail

/// Cached quantities of one SpectralDynamics: V^-1, V^-1 B and V^-1 Q V^-T.
template <class T>
class EigenSdeSolver {
 public:
  explicit EigenSdeSolver(const BasicSpectralDynamics<T>& dyn)
      : dyn_(dyn), v_inv_(linalg::inverse(dyn.basis.V)) {
    const int n = dyn.state_dim();
    if (dyn.Q.rows() != n || dyn.Q.cols() != n) throw DimensionError("solver: Q must be n x n");
    if (dyn.B.rows() != n) throw DimensionError("solver: B must have n rows");
    v_inv_b_ = v_inv_ * dyn.B;
    p_ = v_inv_ * dyn.Q * v_inv_.transpose();
  }

  const BasicSpectralDynamics<T>& dynamics() const { return dyn_; }
  const Mat<T>& basis_inverse() const { return v_inv_; }

  /// Applies D(h) to eigen-coordinates in place.
  void apply_exp(Vec<T>& z, double h) const {
    using std::cos;
    using std::sin;
    int i = 0;
    for (const auto& e : dyn_.spectrum.entries) {
      const T g = detail::clamped_exp(T(e.a * h));
      if (!e.is_pair()) {
        z(i) = g * z(i);
        i += 1;
      } else {
        const T c = g * cos(T(e.b * h));
        const T s = g * sin(T(e.b * h));
        const T z0 = z(i);
        const T z1 = z(i + 1);
        z(i) = c * z0 + s * z1;
        z(i + 1) = c * z1 - s * z0;
        i += 2;
      }
    }
  }

  /// G(h) w for eigen-coordinate vector w.
  Vec<T> apply_exp_integral(const Vec<T>& w, double h) const {
    Vec<T> out(w.size());
    int i = 0;
    for (const auto& e : dyn_.spectrum.entries) {
      if (!e.is_pair()) {
        out(i) = detail::exp_integral(e.a, T(0.0), h).re * w(i);
        i += 1;
      } else {
        const auto k = detail::exp_integral(e.a, e.b, h);
        out(i) = k.re * w(i) + k.im * w(i + 1);
        out(i + 1) = k.re * w(i + 1) - k.im * w(i);
        i += 2;
      }
    }
    return out;
  }

  /// Eigen-coordinate control drive V^-1 B u.
  Vec<T> drive(const VectorXd& u) const {
    if (u.size() != dyn_.B.cols()) throw DimensionError("solver: control dimension mismatch");
    return v_inv_b_ * u.template cast<T>();
  }

  /// Phi(t1) int_{t0}^{t1} Phi(tau)^-1 B u dtau for constant u.
  Vec<T> control_integral(const VectorXd& u, double t0, double t1) const {
    check_span(t0, t1);
    return dyn_.basis.V * apply_exp_integral(drive(u), t1 - t0);
  }

  /// N(h) = int_0^h D(s) P D(s)^T ds in eigen-coordinates.
  Mat<T> noise_eigen(double h) const;

  /// Diffusion contribution V N(h) V^T to the covariance after a span h.
  Mat<T> noise_integral(double t0, double t1) const {
    check_span(t0, t1);
    return linalg::symmetrize<T>(dyn_.basis.V * noise_eigen(t1 - t0) * dyn_.basis.V.transpose());
  }

  BasicGaussianBelief<T> propagate(const BasicGaussianBelief<T>& belief, const ControlSignal& control,
                                   double t_target) const;

 private:
  static void check_span(double t0, double t1) {
    if (!(t1 >= t0)) throw Error("solver: t1 < t0 (time reversal)");
  }

  const BasicSpectralDynamics<T>& dyn_;
  Mat<T> v_inv_;
  Mat<T> v_inv_b_;
  Mat<T> p_;
};

template <class T>
Mat<T> EigenSdeSolver<T>::noise_eigen(double h) const {
  const int n = dyn_.state_dim();
  const auto& entries = dyn_.spectrum.entries;
  std::vector<int> start;
  int pos = 0;
  for (const auto& e : entries) {
    start.push_back(pos);
    pos += e.dim();
  }
  Mat<T> out = Mat<T>::Zero(n, n);
  // D_i(s) = e^{a_i s} (C_i cos(b_i s) + S_i sin(b_i s)), with C = I and
  // S = [[0, 1], [-1, 0]] for pairs, C = [1], S = [0] for real entries. Each
  // block D_i P_ij D_j^T expands into e^{cs} cos/sin((b_i -+ b_j) s) terms.
  for (std::size_t bi = 0; bi < entries.size(); ++bi) {
    for (std::size_t bj = bi; bj < entries.size(); ++bj) {
      const auto& ei = entries[bi];
      const auto& ej = entries[bj];
      const int wi = ei.dim();
      const int wj = ej.dim();
      const Mat<T> p = p_.block(start[bi], start[bj], wi, wj);
      const T c = ei.a + ej.a;
      Mat<T> block;
      if (!ei.is_pair() && !ej.is_pair()) {
        block = p * detail::exp_integral(c, T(0.0), h).re;
      } else {
        const T bi_v = ei.is_pair() ? ei.b : T(0.0);
        const T bj_v = ej.is_pair() ? ej.b : T(0.0);
        const auto kd = detail::exp_integral(c, T(bi_v - bj_v), h);
        const auto ks = detail::exp_integral(c, T(bi_v + bj_v), h);
        // S p and p S^T for the rotation generator S = [[0, 1], [-1, 0]].
        auto left_s = [](const Mat<T>& m) {
          Mat<T> r(m.rows(), m.cols());
          r.row(0) = m.row(1);
          r.row(1) = -m.row(0);
          return r;
        };
        auto right_st = [](const Mat<T>& m) {
          Mat<T> r(m.rows(), m.cols());
          r.col(0) = m.col(1);
          r.col(1) = -m.col(0);
          return r;
        };
        const T half(0.5);
        block = p * ((kd.re + ks.re) * half);
        if (ej.is_pair()) block += right_st(p) * ((ks.im - kd.im) * half);
        if (ei.is_pair()) block += left_s(p) * ((ks.im + kd.im) * half);
        if (ei.is_pair() && ej.is_pair()) block += left_s(right_st(p)) * ((kd.re - ks.re) * half);
      }
      out.block(start[bi], start[bj], wi, wj) = block;
      if (bj != bi) out.block(start[bj], start[bi], wj, wi) = block.transpose();
    }
  }
  return out;
}

template <class T>
BasicGaussianBelief<T> EigenSdeSolver<T>::propagate(const BasicGaussianBelief<T>& belief,
                                                    const ControlSignal& control, double t_target) const {
  const int n = dyn_.state_dim();
  if (belief.mu.size() != n || belief.sigma.rows() != n) throw DimensionError("propagate: belief dimension mismatch");
  if (!(t_target >= belief.t)) throw Error("propagate: target time precedes the belief (time reversal)");
  const double h = t_target - belief.t;
  BasicGaussianBelief<T> out;
  out.t = t_target;
  if (h == 0.0) {
    out.mu = belief.mu;
    out.sigma = belief.sigma;
    return out;
  }
  Vec<T> z = v_inv_ * belief.mu;
  apply_exp(z, h);
  if (control.dim() > 0 && dyn_.B.cols() > 0) {
    for (const auto& piece : control.pieces(belief.t, t_target)) {
      if (piece.u == nullptr) continue;
      Vec<T> contribution = apply_exp_integral(drive(*piece.u), piece.t1 - piece.t0);
      apply_exp(contribution, t_target - piece.t1);
      z += contribution;
    }
  }
  out.mu = dyn_.basis.V * z;

  Mat<T> p0 = v_inv_ * belief.sigma * v_inv_.transpose();
  Mat<T> d(n, n);
  for (int c = 0; c < n; ++c) {
    Vec<T> col = p0.col(c);
    apply_exp(col, h);
    d.col(c) = col;
  }
  // d = D P0; now D P0 D^T
  Mat<T> dt = d.transpose();
  for (int c = 0; c < n; ++c) {
    Vec<T> col = dt.col(c);
    apply_exp(col, h);
    dt.col(c) = col;
  }
  const Mat<T> eigen_cov = dt.transpose() + noise_eigen(h);
  out.sigma = linalg::psd_repair<T>(dyn_.basis.V * eigen_cov * dyn_.basis.V.transpose());
  return out;
}

template <class T>
Vec<T> control_integral_analytic(const BasicSpectralDynamics<T>& dyn, const VectorXd& u, double t0, double t1) {
  return EigenSdeSolver<T>(dyn).control_integral(u, t0, t1);
}

template <class T>
Mat<T> noise_integral(const BasicSpectralDynamics<T>& dyn, double t0, double t1) {
  return EigenSdeSolver<T>(dyn).noise_integral(t0, t1);
}

template <class T>
BasicGaussianBelief<T> propagate(const BasicGaussianBelief<T>& belief, const BasicSpectralDynamics<T>& dyn,
                                 const ControlSignal& control, double t_target) {
  return EigenSdeSolver<T>(dyn).propagate(belief, control, t_target);
}

using ControlFunction = std::function<VectorXd(double)>;

/// Default step for the numeric integrator: 1e-3 of the characteristic time
/// 1 / max|lambda|, capped at horizon / 10.
double default_numeric_step(const SpectralDynamics& dyn, double horizon);

/// Phi(t1) int_{t0}^{t1} Phi(tau)^-1 B u(tau) dtau as a non-recursive sum of
/// independent midpoint samples of width <= dt.
VectorXd control_integral_numeric(const SpectralDynamics& dyn, const ControlFunction& u_fn, double t0, double t1,
                                  double dt);

/// Propagation for arbitrary control: the control term by the numeric sum,
/// the covariance in closed form. dt <= 0 selects default_numeric_step.
GaussianBelief propagate_numeric(const GaussianBelief& belief, const SpectralDynamics& dyn,
                                 const ControlFunction& u_fn, double t_target, double dt = 0.0);

template <class T>
struct BasicPredictive {
  Vec<T> mean;
  Mat<T> cov;
};
using Predictive = BasicPredictive<double>;

/// Distribution of the next observation: first m coordinates, un-shifted by
/// alpha, inflated by R.
template <class T>
BasicPredictive<T> predictive_observation(const BasicGaussianBelief<T>& belief, const Vec<T>& alpha, const Mat<T>& r) {
  const Eigen::Index m = r.rows();
  if (m > belief.mu.size()) throw DimensionError("predictive_observation: m > n");
  if (alpha.size() != belief.mu.size()) throw DimensionError("predictive_observation: alpha dimension mismatch");
  return {belief.mu.head(m) + alpha.head(m), belief.sigma.topLeftCorner(m, m) + r};
}

template <class T>
BasicPredictive<T> predictive_observation(const BasicGaussianBelief<T>& belief, const BasicSpectralDynamics<T>& dyn) {
  return predictive_observation(belief, dyn.alpha, dyn.R);
}

}  // namespace nesde
