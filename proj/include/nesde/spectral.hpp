#pragma once

// Spectral representation of a linear dynamics operator.
//
// A real operator A with distinct eigenvalues is stored as a list of spectrum
// entries plus a real basis V. A real eigenvalue r owns one column of V; a
// conjugate pair a +- bi (b > 0) owns two adjacent columns (v_real, v_im) of
// the complex eigenvector v_real + i v_im belonging to a + bi. In that basis
//
//   A = V * blockdiag(r | [[a, b], [-b, a]]) * V^-1
//   Phi(t) = V * D(t),  D(t) = blockdiag(e^{rt} | e^{at} [[cos bt, sin bt], [-sin bt, cos bt]])
//
// so every quantity stays real.

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "nesde/ad.hpp"
#include "nesde/linalg.hpp"
#include "nesde/types.hpp"

namespace nesde {

/// Exponent arguments are clipped to this range before exponentiation.
inline constexpr double kExponentClamp = 60.0;

enum class EigenKind { kReal, kComplexPair };

template <class T>
struct SpectrumEntry {
  EigenKind kind = EigenKind::kReal;
  T a{};  // rate of a real eigenvalue, or the real part of a pair
  T b{};  // imaginary magnitude of a pair (> 0); zero for real entries

  static SpectrumEntry real(T r) { return {EigenKind::kReal, r, T(0.0)}; }
  static SpectrumEntry complex_pair(T re, T im) { return {EigenKind::kComplexPair, re, im}; }

  int dim() const { return kind == EigenKind::kReal ? 1 : 2; }
  bool is_pair() const { return kind == EigenKind::kComplexPair; }
};

template <class T>
struct BasicSpectrum {
  std::vector<SpectrumEntry<T>> entries;

  int dim() const {
    int n = 0;
    for (const auto& e : entries) n += e.dim();
    return n;
  }
  int complex_pairs() const {
    int c = 0;
    for (const auto& e : entries) c += e.is_pair() ? 1 : 0;
    return c;
  }
  /// All real parts strictly negative.
  bool is_stable() const {
    for (const auto& e : entries)
      if (!(value_of(e.a) < 0.0)) return false;
    return true;
  }
};

template <class T>
struct BasicEigenBasis {
  Mat<T> V;
};

template <class T>
struct BasicSpectralDynamics {
  BasicSpectrum<T> spectrum;
  BasicEigenBasis<T> basis;
  Mat<T> Q;      // n x n diffusion covariance
  Mat<T> B;      // n x k control map
  Vec<T> alpha;  // asymptotic state
  Mat<T> R;      // m x m observation noise

  int state_dim() const { return spectrum.dim(); }
  int control_dim() const { return static_cast<int>(B.cols()); }
  int obs_dim() const { return static_cast<int>(R.rows()); }
};

using Spectrum = BasicSpectrum<double>;
using EigenBasis = BasicEigenBasis<double>;
using SpectralDynamics = BasicSpectralDynamics<double>;

namespace detail {
template <class T>
T clamped_exp(const T& x) {
  using std::exp;
  const double v = value_of(x);
  if (v > kExponentClamp) return T(std::exp(kExponentClamp));
  if (v < -kExponentClamp) return T(std::exp(-kExponentClamp));
  return exp(x);
}

template <class T>
void check_dims(const BasicSpectrum<T>& spectrum, const BasicEigenBasis<T>& basis) {
  const int n = spectrum.dim();
  if (basis.V.rows() != n || basis.V.cols() != n)
    throw DimensionError("spectrum of dimension " + std::to_string(n) + " does not match basis " +
                         std::to_string(basis.V.rows()) + "x" + std::to_string(basis.V.cols()));
}
}  // namespace detail

/// D(t): block-diagonal e^{Lambda t} in real form.
template <class T>
Mat<T> exp_blocks(const BasicSpectrum<T>& spectrum, double t) {
  using std::cos;
  using std::sin;
  const int n = spectrum.dim();
  Mat<T> d = Mat<T>::Zero(n, n);
  int i = 0;
  for (const auto& e : spectrum.entries) {
    const T g = detail::clamped_exp(T(e.a * t));
    if (!e.is_pair()) {
      d(i, i) = g;
      i += 1;
    } else {
      const T c = g * cos(T(e.b * t));
      const T s = g * sin(T(e.b * t));
      d(i, i) = c;
      d(i, i + 1) = s;
      d(i + 1, i) = -s;
      d(i + 1, i + 1) = c;
      i += 2;
    }
  }
  return d;
}

/// Lambda in real block form, so that A = V * generator_blocks * V^-1.
template <class T>
Mat<T> generator_blocks(const BasicSpectrum<T>& spectrum) {
  const int n = spectrum.dim();
  Mat<T> g = Mat<T>::Zero(n, n);
  int i = 0;
  for (const auto& e : spectrum.entries) {
    if (!e.is_pair()) {
      g(i, i) = e.a;
      i += 1;
    } else {
      g(i, i) = e.a;
      g(i, i + 1) = e.b;
      g(i + 1, i) = -e.b;
      g(i + 1, i + 1) = e.a;
      i += 2;
    }
  }
  return g;
}

template <class T>
Mat<T> phi_eval(const BasicSpectrum<T>& spectrum, const BasicEigenBasis<T>& basis, double t) {
  detail::check_dims(spectrum, basis);
  return basis.V * exp_blocks(spectrum, t);
}

/// Phi(t)^-1 = D(-t) V^-1, built from the block structure.
template <class T>
Mat<T> phi_inv_eval(const BasicSpectrum<T>& spectrum, const BasicEigenBasis<T>& basis, double t) {
  detail::check_dims(spectrum, basis);
  return exp_blocks(spectrum, -t) * linalg::inverse(basis.V);
}

template <class T>
Mat<T> operator_of_spectrum(const BasicSpectrum<T>& spectrum, const BasicEigenBasis<T>& basis) {
  detail::check_dims(spectrum, basis);
  return basis.V * generator_blocks(spectrum) * linalg::inverse(basis.V);
}

struct SpectralDecomposition {
  Spectrum spectrum;
  EigenBasis basis;
};

/// Eigendecomposition of a real diagonalizable operator with distinct
/// eigenvalues, canonicalized (sorted entries, unit-norm basis columns).
SpectralDecomposition spectrum_of_operator(const MatrixXd& a);

/// Sorts entries by real part, then imaginary part, both descending, moving the
/// basis columns along.
SpectralDecomposition canonical_order(const Spectrum& spectrum, const EigenBasis& basis);

/// Scales every real column to unit norm and every pair of columns to unit
/// Frobenius norm.
template <class T>
Mat<T> normalize_basis_columns(const BasicSpectrum<T>& spectrum, const Mat<T>& v) {
  using std::sqrt;
  Mat<T> out = v;
  int i = 0;
  for (const auto& e : spectrum.entries) {
    const int w = e.dim();
    T sq(0.0);
    for (int c = i; c < i + w; ++c)
      for (Eigen::Index r = 0; r < v.rows(); ++r) sq += v(r, c) * v(r, c);
    const T norm = sqrt(sq);
    for (int c = i; c < i + w; ++c) out.col(c) /= norm;
    i += w;
  }
  return out;
}

// JSON: numbers are written as 17-significant-digit decimal strings.
std::string format_exact(double x);
double parse_exact(const nlohmann::json& j);
nlohmann::json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Spectrum& spectrum);
Spectrum spectrum_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SpectralDynamics& dyn);
SpectralDynamics dynamics_from_json(const nlohmann::json& j);

/// Drops derivative information.
SpectralDynamics values(const BasicSpectralDynamics<ad::Var>& dyn);
inline const SpectralDynamics& values(const SpectralDynamics& dyn) { return dyn; }

/// Checks the SpectralDynamics invariants: consistent shapes, finite B and
/// alpha, symmetric PSD Q and R. Throws DimensionError / NumericalError.
void validate(const SpectralDynamics& dyn);

}  // namespace nesde
