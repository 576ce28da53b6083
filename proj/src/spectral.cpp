#include "nesde/spectral.hpp"

#include <algorithm>
#include <complex>
#include <cstdio>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace nesde {

namespace {

using Json = nlohmann::json;

constexpr double kMaxBasisCondition = 1e10;

}  // namespace

SpectralDecomposition canonical_order(const Spectrum& spectrum, const EigenBasis& basis) {
  detail::check_dims(spectrum, basis);
  std::vector<int> starts;
  int col = 0;
  for (const auto& e : spectrum.entries) {
    starts.push_back(col);
    col += e.dim();
  }
  std::vector<std::size_t> order(spectrum.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const auto& ex = spectrum.entries[x];
    const auto& ey = spectrum.entries[y];
    if (ex.a != ey.a) return ex.a > ey.a;
    return ex.b > ey.b;
  });
  SpectralDecomposition out;
  out.basis.V.resize(basis.V.rows(), basis.V.cols());
  int dst = 0;
  for (auto idx : order) {
    const auto& e = spectrum.entries[idx];
    out.spectrum.entries.push_back(e);
    for (int c = 0; c < e.dim(); ++c) out.basis.V.col(dst + c) = basis.V.col(starts[idx] + c);
    dst += e.dim();
  }
  return out;
}

SpectralDecomposition spectrum_of_operator(const MatrixXd& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw DimensionError("spectrum_of_operator: operator is not square");
  if (!a.allFinite()) throw NumericalError("spectrum_of_operator: non-finite operator");
  Spectrum spectrum;
  EigenBasis basis;
  basis.V.resize(n, n);
  if (n == 0) return {spectrum, basis};

  Eigen::EigenSolver<MatrixXd> solver(a);
  if (solver.info() != Eigen::Success) throw NumericalError("spectrum_of_operator: eigensolver failed");
  const Eigen::VectorXcd lambda = solver.eigenvalues();
  const Eigen::MatrixXcd vectors = solver.eigenvectors();

  const double scale = std::max(1.0, a.norm());
  const double imag_tol = 1e-10 * scale;
  const double distinct_tol = 1e-7 * scale;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (std::abs(lambda(i) - lambda(j)) < distinct_tol)
        throw NumericalError("spectrum_of_operator: repeated eigenvalue (defective or near-defective operator)");

  int col = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> z = lambda(i);
    if (std::abs(z.imag()) <= imag_tol) {
      spectrum.entries.push_back(SpectrumEntry<double>::real(z.real()));
      basis.V.col(col) = vectors.col(i).real();
      if (basis.V.col(col).norm() < 1e-12) basis.V.col(col) = vectors.col(i).imag();
      col += 1;
    } else if (z.imag() > 0.0) {
      spectrum.entries.push_back(SpectrumEntry<double>::complex_pair(z.real(), z.imag()));
      basis.V.col(col) = vectors.col(i).real();
      basis.V.col(col + 1) = vectors.col(i).imag();
      col += 2;
    }
  }
  if (col != n) throw NumericalError("spectrum_of_operator: unpaired complex eigenvalue");

  basis.V = normalize_basis_columns(spectrum, basis.V);
  if (linalg::condition_number(basis.V) > kMaxBasisCondition)
    throw NumericalError("spectrum_of_operator: eigenbasis is ill-conditioned (near-defective operator)");
  return canonical_order(spectrum, basis);
}

std::string format_exact(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double parse_exact(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw DataError("not a number: '" + s + "'");
    }
    if (used != s.size()) throw DataError("not a number: '" + s + "'");
    return v;
  }
  throw DataError("expected a number, got " + j.dump());
}

Json matrix_to_json(const MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(format_exact(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array()) throw DataError("expected a matrix (array of rows)");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw DataError("ragged matrix row");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = parse_exact(row[static_cast<std::size_t>(c)]);
  }
  return m;
}

Json vector_to_json(const VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(format_exact(v(i)));
  return out;
}

VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw DataError("expected a vector (array)");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = parse_exact(j[i]);
  return v;
}

Json to_json(const Spectrum& spectrum) {
  Json out = Json::array();
  for (const auto& e : spectrum.entries) {
    if (e.is_pair())
      out.push_back({{"type", "complex"}, {"a", format_exact(e.a)}, {"b", format_exact(e.b)}});
    else
      out.push_back({{"type", "real"}, {"r", format_exact(e.a)}});
  }
  return out;
}

Spectrum spectrum_from_json(const Json& j) {
  if (!j.is_array()) throw DataError("spectrum: expected an array");
  Spectrum s;
  for (const auto& e : j) {
    const auto type = e.at("type").get<std::string>();
    if (type == "real") {
      s.entries.push_back(SpectrumEntry<double>::real(parse_exact(e.at("r"))));
    } else if (type == "complex") {
      const double b = parse_exact(e.at("b"));
      if (!(b > 0.0)) throw DataError("spectrum: complex pair needs b > 0");
      s.entries.push_back(SpectrumEntry<double>::complex_pair(parse_exact(e.at("a")), b));
    } else {
      throw DataError("spectrum: unknown entry type '" + type + "'");
    }
  }
  return s;
}

Json to_json(const SpectralDynamics& dyn) {
  return {{"spectrum", to_json(dyn.spectrum)}, {"V", matrix_to_json(dyn.basis.V)},
          {"Q", matrix_to_json(dyn.Q)},         {"B", matrix_to_json(dyn.B)},
          {"alpha", vector_to_json(dyn.alpha)}, {"R", matrix_to_json(dyn.R)}};
}

SpectralDynamics dynamics_from_json(const Json& j) {
  SpectralDynamics dyn;
  try {
    dyn.spectrum = spectrum_from_json(j.at("spectrum"));
    dyn.basis.V = matrix_from_json(j.at("V"));
    dyn.Q = matrix_from_json(j.at("Q"));
    dyn.B = matrix_from_json(j.at("B"));
    dyn.alpha = vector_from_json(j.at("alpha"));
    dyn.R = matrix_from_json(j.at("R"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("dynamics: ") + e.what());
  }
  const int n = dyn.state_dim();
  // An empty control map serializes as [] and loses its row count.
  if (dyn.B.rows() == 0) dyn.B.resize(n, 0);
  validate(dyn);
  return dyn;
}

SpectralDynamics values(const BasicSpectralDynamics<ad::Var>& dyn) {
  SpectralDynamics out;
  for (const auto& e : dyn.spectrum.entries) out.spectrum.entries.push_back({e.kind, e.a.value(), e.b.value()});
  out.basis.V = linalg::values(dyn.basis.V);
  out.Q = linalg::values(dyn.Q);
  out.B = linalg::values(dyn.B);
  out.alpha = linalg::values(dyn.alpha);
  out.R = linalg::values(dyn.R);
  return out;
}

void validate(const SpectralDynamics& dyn) {
  const int n = dyn.state_dim();
  detail::check_dims(dyn.spectrum, dyn.basis);
  if (dyn.Q.rows() != n || dyn.Q.cols() != n) throw DimensionError("dynamics: Q must be n x n");
  if (dyn.B.rows() != n) throw DimensionError("dynamics: B must have n rows");
  if (dyn.alpha.size() != n) throw DimensionError("dynamics: alpha must have n entries");
  if (dyn.R.rows() != dyn.R.cols() || dyn.R.rows() > n) throw DimensionError("dynamics: R must be m x m with m <= n");
  for (const auto& e : dyn.spectrum.entries)
    if (e.is_pair() && !(e.b > 0.0)) throw DataError("dynamics: complex pair needs b > 0");
  if (!dyn.alpha.allFinite() || !dyn.B.allFinite() || !dyn.basis.V.allFinite())
    throw NumericalError("dynamics: non-finite alpha, B or V");
  for (const MatrixXd* m : {&dyn.Q, &dyn.R}) {
    if (m->size() == 0) continue;
    if (!m->allFinite()) throw NumericalError("dynamics: non-finite covariance");
    if ((*m - m->transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m->cwiseAbs().maxCoeff()))
      throw NumericalError("dynamics: covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(*m);
    if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, m->cwiseAbs().maxCoeff()))
      throw NumericalError("dynamics: covariance is not positive semi-definite");
  }
}

}  // namespace nesde
