#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sgdfluct {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Invalid specification or configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: mass drift, CFL violation, non-PSD noise, breakdown (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sgdfluct
