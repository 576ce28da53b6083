#pragma once

// Conditioning a Gaussian belief on a noisy observation of (some of) its
// first m coordinates.

#include <vector>

#include "nesde/ad.hpp"
#include "nesde/linalg.hpp"
#include "nesde/solver.hpp"
#include "nesde/spectral.hpp"
#include "nesde/types.hpp"

namespace nesde {

struct Observation {
  double t = 0.0;
  VectorXd y_hat;          // raw observation, not shifted by alpha
  std::vector<bool> mask;  // one flag per observed coordinate

  std::vector<int> observed_indices() const;
};

/// Row-selection matrix picking the masked coordinates out of an n-vector.
MatrixXd selection_matrix(const std::vector<bool>& mask, int n);

namespace detail {

/// Conditions N(mu, sigma) on its first k coordinates being equal to `value`
/// and returns the distribution of the remaining ones.
template <class T>
BasicGaussianBelief<T> condition_leading(const Vec<T>& mu, const Mat<T>& sigma, const Vec<T>& value, double t) {
  const Eigen::Index k = value.size();
  const Eigen::Index rest = mu.size() - k;
  const auto chol = linalg::cholesky_with_jitter<T>(sigma.topLeftCorner(k, k), "condition: innovation covariance");
  const Mat<T> cross = sigma.bottomLeftCorner(rest, k);
  const Mat<T> gain_t = linalg::cholesky_solve<T>(chol.lower, cross.transpose());  // S^-1 Sigma_yz
  const Vec<T> innovation = value - mu.head(k);
  BasicGaussianBelief<T> out;
  out.t = t;
  out.mu = mu.tail(rest) + gain_t.transpose() * innovation;
  out.sigma = linalg::symmetrize<T>(Mat<T>(sigma.bottomRightCorner(rest, rest) - cross * gain_t));
  return out;
}

}  // namespace detail

/// Exact conditional N(X | y_hat) through the augmented state (Y_hat, X):
/// Y_hat is appended as extra leading coordinates with
///   Cov(Y_hat, Y_hat) = Sigma_SS + R_SS,   Cov(Y_hat, X) = Sigma_S.,
/// and then observed noiselessly. S are the masked coordinates. `r` is the
/// observation-noise covariance over all m coordinates.
template <class T>
BasicGaussianBelief<T> condition(const BasicGaussianBelief<T>& belief, const Observation& obs, const Vec<T>& alpha,
                                 const Mat<T>& r) {
  const Eigen::Index n = belief.mu.size();
  const Eigen::Index m = r.rows();
  if (obs.y_hat.size() != m || static_cast<Eigen::Index>(obs.mask.size()) != m)
    throw DimensionError("condition: observation dimension mismatch");
  if (m > n) throw DimensionError("condition: m > n");
  const std::vector<int> idx = obs.observed_indices();
  if (idx.empty()) throw DataError("condition: observation has an empty mask");
  const auto k = static_cast<Eigen::Index>(idx.size());

  Vec<T> mu_aug(k + n);
  Mat<T> sigma_aug(k + n, k + n);
  Vec<T> value(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    const int ia = idx[static_cast<std::size_t>(a)];
    mu_aug(a) = belief.mu(ia);
    value(a) = T(obs.y_hat(ia)) - alpha(ia);
    for (Eigen::Index b = 0; b < k; ++b) {
      const int ib = idx[static_cast<std::size_t>(b)];
      sigma_aug(a, b) = belief.sigma(ia, ib) + r(ia, ib);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      sigma_aug(a, k + j) = belief.sigma(ia, j);
      sigma_aug(k + j, a) = belief.sigma(j, ia);
    }
  }
  mu_aug.tail(n) = belief.mu;
  sigma_aug.bottomRightCorner(n, n) = belief.sigma;
  return detail::condition_leading<T>(mu_aug, sigma_aug, value, belief.t);
}

template <class T>
BasicGaussianBelief<T> condition(const BasicGaussianBelief<T>& belief, const Observation& obs,
                                 const BasicSpectralDynamics<T>& dyn) {
  return condition(belief, obs, dyn.alpha, dyn.R);
}

/// Textbook Kalman measurement update with a Joseph-form covariance:
///   K = Sigma H^T (H Sigma H^T + R)^-1,  mu' = mu + K (y - H mu),
///   Sigma' = (I - K H) Sigma (I - K H)^T + K R K^T.
GaussianBelief kalman_update(const GaussianBelief& belief, const VectorXd& y, const MatrixXd& h, const MatrixXd& r);

}  // namespace nesde
