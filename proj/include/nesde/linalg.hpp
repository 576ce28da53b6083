#pragma once

// Small dense kernels written against a generic scalar so that the same code
// runs on double and on ad::Var. Pivoting and branch decisions look at values
// only.

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "nesde/ad.hpp"
#include "nesde/types.hpp"

namespace nesde::linalg {

template <class T>
Mat<T> symmetrize(const Mat<T>& a) {
  return (a + a.transpose()) * T(0.5);
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
template <class T>
Mat<T> inverse(const Mat<T>& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw DimensionError("inverse: matrix is not square");
  Mat<T> work = a;
  Mat<T> inv = Mat<T>::Identity(n, n);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) scale = std::max(scale, std::abs(value_of(a(i, j))));
  if (scale == 0.0 && n > 0) throw NumericalError("inverse: zero matrix");
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index pivot = col;
    double best = std::abs(value_of(work(col, col)));
    for (Eigen::Index r = col + 1; r < n; ++r) {
      const double v = std::abs(value_of(work(r, col)));
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best <= 1e-14 * scale) throw NumericalError("inverse: singular matrix");
    if (pivot != col) {
      work.row(pivot).swap(work.row(col));
      inv.row(pivot).swap(inv.row(col));
    }
    const T p = work(col, col);
    work.row(col) /= p;
    inv.row(col) /= p;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == col) continue;
      const T f = work(r, col);
      if (is_constant_zero(f)) continue;
      work.row(r) -= f * work.row(col);
      inv.row(r) -= f * inv.row(col);
    }
  }
  return inv;
}

/// Lower Cholesky factor, or nullopt when `a` is not positive definite.
template <class T>
std::optional<Mat<T>> cholesky(const Mat<T>& a) {
  using std::sqrt;
  const Eigen::Index n = a.rows();
  Mat<T> l = Mat<T>::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    T d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(value_of(d) > 0.0) || !std::isfinite(value_of(d))) return std::nullopt;
    l(j, j) = sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      T s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

template <class T>
struct JitteredCholesky {
  Mat<T> lower;
  double jitter = 0.0;
};

/// Cholesky factorization; on failure, retries with jitter*I starting at
/// `first_jitter` and growing x10 up to `max_jitter`.
template <class T>
JitteredCholesky<T> cholesky_with_jitter(const Mat<T>& a, const std::string& what,
                                         double first_jitter = 1e-9, double max_jitter = 1e-5) {
  if (auto l = cholesky(a)) return {std::move(*l), 0.0};
  const Eigen::Index n = a.rows();
  for (double jitter = first_jitter; jitter <= max_jitter * (1.0 + 1e-12); jitter *= 10.0) {
    Mat<T> shifted = a;
    for (Eigen::Index i = 0; i < n; ++i) shifted(i, i) += T(jitter);
    if (auto l = cholesky(shifted)) return {std::move(*l), jitter};
  }
  throw NumericalError(what + ": matrix is not positive definite even after jitter");
}

/// Solves L L^T x = b for x.
template <class T>
Mat<T> cholesky_solve(const Mat<T>& lower, const Mat<T>& b) {
  const Eigen::Index n = lower.rows();
  Mat<T> y = b;
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      T s = y(i, c);
      for (Eigen::Index k = 0; k < i; ++k) s -= lower(i, k) * y(k, c);
      y(i, c) = s / lower(i, i);
    }
    for (Eigen::Index i = n; i-- > 0;) {
      T s = y(i, c);
      for (Eigen::Index k = i + 1; k < n; ++k) s -= lower(k, i) * y(k, c);
      y(i, c) = s / lower(i, i);
    }
  }
  return y;
}

template <class T>
T cholesky_log_det(const Mat<T>& lower) {
  using std::log;
  T s(0.0);
  for (Eigen::Index i = 0; i < lower.rows(); ++i) s += log(lower(i, i));
  return s * T(2.0);
}

MatrixXd values(const MatrixXd& a);
MatrixXd values(const Mat<ad::Var>& a);
VectorXd values(const VectorXd& a);
VectorXd values(const Vec<ad::Var>& a);

/// Symmetrizes and, when the smallest eigenvalue is below -tol, lifts the
/// negative part of the spectrum to zero. The lift is treated as a constant
/// correction; derivatives flow through the symmetrized matrix.
template <class T>
Mat<T> psd_repair(const Mat<T>& a, double tol = 1e-9) {
  Mat<T> s = symmetrize(a);
  if (s.rows() == 0) return s;
  const MatrixXd sv = values(s);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sv);
  if (es.eigenvalues().minCoeff() >= -tol) return s;
  const VectorXd lift = (-es.eigenvalues().array()).max(0.0).matrix();
  const MatrixXd correction = es.eigenvectors() * lift.asDiagonal() * es.eigenvectors().transpose();
  return s + correction.template cast<T>();
}

/// 2-norm condition number.
double condition_number(const MatrixXd& a);

/// Solves A X + X A^T + Q = 0 through the Kronecker-vectorized linear system.
MatrixXd solve_lyapunov(const MatrixXd& a, const MatrixXd& q);

}  // namespace nesde::linalg
