#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace nesde {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Eigen::MatrixXd;
using Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of the operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be inverted or factorized is (numerically) singular,
/// or a computation produced non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, e.g. an unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace nesde
