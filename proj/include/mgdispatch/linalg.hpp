#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace mgd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecI = Eigen::VectorXi;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateSetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double max_asymmetry(const Mat& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

inline double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

// Lower-triangular Cholesky factor with positive diagonal. Throws
// DegenerateSetError if the input is not symmetric positive definite.
Mat cholesky_lower(const Mat& m);

bool is_spd(const Mat& m, double sym_tol = 1e-10);

}  // namespace mgd
