#include "nesde/linalg.hpp"

#include <limits>

namespace nesde::linalg {

MatrixXd values(const MatrixXd& a) { return a; }

MatrixXd values(const Mat<ad::Var>& a) {
  MatrixXd out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) = a(i, j).value();
  return out;
}

VectorXd values(const VectorXd& a) { return a; }

VectorXd values(const Vec<ad::Var>& a) {
  VectorXd out(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out(i) = a(i).value();
  return out;
}

double condition_number(const MatrixXd& a) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  const double smallest = s(s.size() - 1);
  if (smallest <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smallest;
}

MatrixXd solve_lyapunov(const MatrixXd& a, const MatrixXd& q) {
  const Eigen::Index n = a.rows();
  const MatrixXd eye = MatrixXd::Identity(n, n);
  // vec(A X + X A^T) = (I kron A + A kron I) vec(X)
  MatrixXd kron = MatrixXd::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      kron.block(i * n, j * n, n, n) += eye(i, j) * a;
      kron.block(i * n, j * n, n, n) += a(i, j) * eye;
    }
  }
  const VectorXd rhs = -Eigen::Map<const VectorXd>(q.data(), n * n);
  const VectorXd x = kron.fullPivLu().solve(rhs);
  MatrixXd out = Eigen::Map<const MatrixXd>(x.data(), n, n);
  return 0.5 * (out + out.transpose());
}

}  // namespace nesde::linalg
