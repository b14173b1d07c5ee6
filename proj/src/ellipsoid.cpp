#include "mgdispatch/ellipsoid.hpp"

#include <sstream>

namespace mgd {

Mat cholesky_lower(const Mat& m) {
  if (m.rows() != m.cols()) throw DimensionError("cholesky_lower: matrix must be square");
  if (max_asymmetry(m) > 1e-10)
    throw DegenerateSetError("cholesky_lower: matrix is not symmetric");
  Eigen::LLT<Mat> llt(symmetrized(m));
  if (llt.info() != Eigen::Success)
    throw DegenerateSetError("cholesky_lower: matrix is not positive definite");
  return llt.matrixL();
}

bool is_spd(const Mat& m, double sym_tol) {
  if (m.rows() != m.cols()) return false;
  if (max_asymmetry(m) > sym_tol) return false;
  Eigen::LLT<Mat> llt(symmetrized(m));
  return llt.info() == Eigen::Success;
}

Ellipsoid make_ellipsoid(const Vec& center, const Mat& shape) {
  require(shape.rows() == center.size() && shape.cols() == center.size(),
          "ellipsoid shape/center dimension mismatch");
  if (max_asymmetry(shape) > 1e-10) {
    std::ostringstream os;
    os << "ellipsoid shape asymmetry " << max_asymmetry(shape) << " exceeds 1e-10";
    throw DegenerateSetError(os.str());
  }
  Mat p = symmetrized(shape);
  const double mineig = min_eigenvalue(p);
  if (mineig <= 0.0) {
    if (mineig > -1e-9) {
      p += 1e-9 * Mat::Identity(p.rows(), p.cols());
    } else {
      std::ostringstream os;
      os << "ellipsoid shape not positive definite (min eigenvalue " << mineig << ")";
      throw DegenerateSetError(os.str());
    }
  }
  return Ellipsoid{center, p};
}

double containment_margin(const Ellipsoid& e, const Vec& x) {
  require(x.size() == e.center.size(), "containment point dimension mismatch");
  Eigen::LLT<Mat> llt(e.shape);
  if (llt.info() != Eigen::Success)
    throw DegenerateSetError("containment check on a degenerate ellipsoid");
  Vec d = x - e.center;
  return d.dot(llt.solve(d));
}

bool contains(const Ellipsoid& e, const Vec& x, double tol) {
  return containment_margin(e, x) <= 1.0 + tol;
}

void NoiseBounds::validate() const {
  if (!is_spd(Q)) throw ConfigError("noise bound Q must be SPD");
  if (!is_spd(R)) throw ConfigError("noise bound R must be SPD");
  if (Q.rows() != R.rows()) throw ConfigError("noise bounds Q and R must share dimension");
}

}  // namespace mgd
