#include "nesde/filter.hpp"

namespace nesde {

std::vector<int> Observation::observed_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(static_cast<int>(i));
  return idx;
}

MatrixXd selection_matrix(const std::vector<bool>& mask, int n) {
  int k = 0;
  for (bool b : mask) k += b ? 1 : 0;
  MatrixXd h = MatrixXd::Zero(k, n);
  int row = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) h(row++, static_cast<Eigen::Index>(i)) = 1.0;
  return h;
}

GaussianBelief kalman_update(const GaussianBelief& belief, const VectorXd& y, const MatrixXd& h, const MatrixXd& r) {
  const Eigen::Index n = belief.mu.size();
  if (h.cols() != n || h.rows() != y.size() || r.rows() != y.size() || r.cols() != y.size())
    throw DimensionError("kalman_update: dimension mismatch");
  const MatrixXd s = h * belief.sigma * h.transpose() + r;
  const auto chol = linalg::cholesky_with_jitter<double>(s, "kalman_update: innovation covariance");
  const MatrixXd gain = linalg::cholesky_solve<double>(chol.lower, h * belief.sigma).transpose();
  const MatrixXd i_kh = MatrixXd::Identity(n, n) - gain * h;
  GaussianBelief out;
  out.t = belief.t;
  out.mu = belief.mu + gain * (y - h * belief.mu);
  out.sigma = linalg::symmetrize<double>(i_kh * belief.sigma * i_kh.transpose() + gain * r * gain.transpose());
  return out;
}

}  // namespace nesde
