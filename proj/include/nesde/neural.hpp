#pragma once

// Dense feed-forward networks over a flat parameter vector, the Gaussian
// negative log-likelihood, and Adam.

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "nesde/ad.hpp"
#include "nesde/linalg.hpp"
#include "nesde/types.hpp"

namespace nesde {

enum class Activation { kTanh, kRelu, kIdentity };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

/// Layer sizes [in, hidden..., out]; hidden layers use `activation`, the
/// output layer is linear. Parameters are laid out layer by layer as the
/// row-major weight matrix followed by the bias.
struct MlpShape {
  std::vector<int> sizes;
  Activation activation = Activation::kTanh;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  int layers() const { return static_cast<int>(sizes.size()) - 1; }
  int num_params() const;
};

struct Mlp {
  MlpShape shape;
  VectorXd params;

  /// Xavier-uniform weights (scaled by `gain`), zero biases.
  static Mlp initialized(MlpShape shape, std::mt19937_64& rng, double gain = 1.0);
};

namespace detail {
template <class T>
T activate(const T& x, Activation a) {
  using std::tanh;
  switch (a) {
    case Activation::kTanh:
      return tanh(x);
    case Activation::kRelu:
      return value_of(x) > 0.0 ? x : T(0.0);
    case Activation::kIdentity:
      break;
  }
  return x;
}

inline double affine_row(const double* w, const double* x, int n, double b) {
  double acc = b;
  for (int j = 0; j < n; ++j) acc += w[j] * x[j];
  return acc;
}
inline ad::Var affine_row(const ad::Var* w, const ad::Var* x, int n, const ad::Var& b) {
  return ad::fused_dot(std::span<const ad::Var>(w, static_cast<std::size_t>(n)),
                       std::span<const ad::Var>(x, static_cast<std::size_t>(n)), b);
}
}  // namespace detail

/// Forward pass with parameters taken from `params` (size shape.num_params()).
template <class T>
Vec<T> mlp_apply(const MlpShape& shape, std::span<const T> params, const Vec<T>& x) {
  if (x.size() != shape.input_dim())
    throw DimensionError("mlp: input has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(shape.input_dim()));
  if (static_cast<int>(params.size()) != shape.num_params()) throw DimensionError("mlp: parameter count mismatch");
  std::vector<T> cur(x.data(), x.data() + x.size());
  std::vector<T> next;
  std::size_t offset = 0;
  for (int l = 0; l < shape.layers(); ++l) {
    const int in = shape.sizes[static_cast<std::size_t>(l)];
    const int out = shape.sizes[static_cast<std::size_t>(l + 1)];
    const T* w = params.data() + offset;
    const T* b = w + static_cast<std::ptrdiff_t>(in) * out;
    next.resize(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) next[static_cast<std::size_t>(i)] = detail::affine_row(w + i * in, cur.data(), in, b[i]);
    offset += static_cast<std::size_t>(in) * out + out;
    if (l + 1 < shape.layers())
      for (auto& v : next) v = detail::activate(v, shape.activation);
    cur.swap(next);
  }
  return Eigen::Map<const Vec<T>>(cur.data(), static_cast<Eigen::Index>(cur.size()));
}

/// Registers every entry of `params` as an independent variable on the
/// active tape; gradient() reads the adjoints back after Tape::backward.
class ParameterBinding {
 public:
  ParameterBinding(ad::Tape& tape, const VectorXd& params);
  std::span<const ad::Var> vars() const { return vars_; }
  std::span<const ad::Var> slice(std::size_t offset, std::size_t count) const {
    return std::span<const ad::Var>(vars_).subspan(offset, count);
  }
  VectorXd gradient(const ad::Tape& tape) const;

 private:
  std::vector<ad::Var> vars_;
};

/// Records a forward pass of `net` on `tape`; `bound` receives the parameter
/// variables so the caller can read their gradients.
Vec<ad::Var> mlp_forward(const Mlp& net, const Vec<ad::Var>& x, ad::Tape& tape, std::vector<ad::Var>* bound = nullptr);

/// Gaussian NLL of the masked coordinates of `target`:
///   0.5 (k log 2 pi + log det S + r^T S^-1 r)
/// with S the masked block of `cov` (jittered Cholesky). Returns 0 for an
/// empty mask.
template <class T>
T nll_loss(const Vec<T>& mean, const Mat<T>& cov, const VectorXd& target, const std::vector<bool>& mask) {
  const Eigen::Index m = mean.size();
  if (cov.rows() != m || cov.cols() != m || target.size() != m || static_cast<Eigen::Index>(mask.size()) != m)
    throw DimensionError("nll_loss: dimension mismatch");
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < m; ++i)
    if (mask[static_cast<std::size_t>(i)]) idx.push_back(i);
  const auto k = static_cast<Eigen::Index>(idx.size());
  if (k == 0) return T(0.0);
  Mat<T> s(k, k);
  Mat<T> r(k, 1);
  for (Eigen::Index a = 0; a < k; ++a) {
    r(a, 0) = T(target(idx[a])) - mean(idx[a]);
    for (Eigen::Index b = 0; b < k; ++b) s(a, b) = cov(idx[a], idx[b]);
  }
  const auto chol = linalg::cholesky_with_jitter<T>(s, "nll_loss: predictive covariance");
  const Mat<T> sol = linalg::cholesky_solve<T>(chol.lower, r);
  T quad(0.0);
  for (Eigen::Index a = 0; a < k; ++a) quad += r(a, 0) * sol(a, 0);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  return T(0.5) * (T(static_cast<double>(k) * log_2pi) + linalg::cholesky_log_det<T>(chol.lower) + quad);
}

struct AdamState {
  VectorXd first_moment;
  VectorXd second_moment;
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(Eigen::Index size, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                              double epsilon = 1e-8);
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, VectorXd& params, const VectorXd& grads);

nlohmann::json to_json(const AdamState& state);
AdamState adam_from_json(const nlohmann::json& j);

}  // namespace nesde
