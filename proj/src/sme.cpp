#include "mgdispatch/sme.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace mgd {

namespace {

constexpr double kLambdaFloor = 1e-9;

// Pseudo-inverse of a symmetric PSD matrix via eigendecomposition.
Mat psd_pinv(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(m));
  Vec ev = es.eigenvalues();
  const double cutoff = 1e-13 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vec inv = Vec::Zero(ev.size());
  for (int i = 0; i < ev.size(); ++i)
    if (ev[i] > cutoff) inv[i] = 1.0 / ev[i];
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// Per-step constants reused across multiplier evaluations.
struct UpdateWorkspace {
  Mat P_prev;   // previous shape
  Mat FQF;      // F Q F'
  Mat DRD;      // D R D'
  Mat PC, FC;   // P_prev C', FQF C'
  Mat CPC, CFC; // C P_prev C', C FQF C'
  double trP = 0.0, trF = 0.0;
  bool measured = false;  // C has any nonzero entry
};

// Minimal trace for one multiplier triple; gain/shape computed on demand.
struct InnerSolution {
  double value = std::numeric_limits<double>::infinity();
  Mat L;
};

InnerSolution inner_solve(const UpdateWorkspace& w, double l1, double l2, double l3,
                          bool want_gain) {
  InnerSolution out;
  if (l1 < kLambdaFloor || l2 < kLambdaFloor) return out;
  const int n = static_cast<int>(w.P_prev.rows());
  const double a = 1.0 / l1, b = 1.0 / l2;
  const double trS = a * w.trP + b * w.trF;

  if (!w.measured || l3 < kLambdaFloor) {
    out.value = trS;
    out.L = Mat::Zero(n, n);
    return out;
  }

  const double c = 1.0 / l3;
  Mat M = a * w.CPC + b * w.CFC + c * w.DRD;
  Mat SC = a * w.PC + b * w.FC;
  Mat L = SC * psd_pinv(M);
  // trace((I-LC) S (I-LC)' + L DRD L' / l3) = trace(S) - <L, S C'>
  out.value = trS - (L.cwiseProduct(SC)).sum();
  if (want_gain) out.L = std::move(L);
  return out;
}

Mat shape_for(const UpdateWorkspace& w, const LtiMatrices& lti, const Mat& L,
              double l1, double l2, double l3) {
  const int n = static_cast<int>(w.P_prev.rows());
  Mat ImLC = Mat::Identity(n, n) - L * lti.C;
  Mat P = (1.0 / l1) * ImLC * w.P_prev * ImLC.transpose() +
          (1.0 / l2) * ImLC * w.FQF * ImLC.transpose();
  if (l3 >= kLambdaFloor) P += (1.0 / l3) * L * w.DRD * L.transpose();
  return P;
}

}  // namespace

Mat assemble_lmi(const Mat& P_prev, const NoiseBounds& bounds, const LtiMatrices& lti,
                 const Mat& L, const std::array<double, 3>& lambdas, const Mat& P) {
  const int n = static_cast<int>(P_prev.rows());
  require(P_prev.cols() == n, "P_prev must be square");
  require(lti.C.rows() == n && lti.C.cols() == n, "C must be n x n");
  require(lti.D.rows() == n && lti.D.cols() == n, "D must be n x n");
  require(lti.F.rows() == n && lti.F.cols() == n, "F must be n x n");
  require(L.rows() == n && L.cols() == n, "L must be n x n");
  require(P.rows() == n && P.cols() == n, "P must be square");
  bounds.validate();
  require(bounds.Q.rows() == n, "noise bounds dimension mismatch");

  const Mat E = cholesky_lower(P_prev);
  const Mat ImLC = Mat::Identity(n, n) - L * lti.C;
  const double l1 = lambdas[0], l2 = lambdas[1], l3 = lambdas[2];

  const int m = 3 * n + 1;
  Mat phi(n, m);
  phi.block(0, 0, n, n) = ImLC * E;
  phi.block(0, n, n, n) = ImLC * lti.F;
  phi.block(0, 2 * n, n, n) = -L * lti.D;
  phi.col(3 * n).setZero();

  Mat psi = Mat::Zero(m, m);
  psi.block(0, 0, n, n) = l1 * Mat::Identity(n, n);
  psi.block(n, n, n, n) = l2 * bounds.Q.inverse();
  psi.block(2 * n, 2 * n, n, n) = l3 * bounds.R.inverse();
  psi(3 * n, 3 * n) = 1.0 - l1 - l2 - l3;

  Mat block(m + n, m + n);
  block.topLeftCorner(m, m) = -psi;
  block.topRightCorner(m, n) = phi.transpose();
  block.bottomLeftCorner(n, m) = phi;
  block.bottomRightCorner(n, n) = -P;
  return block;
}

SmeSolution solve_update(const Mat& P_prev, const NoiseBounds& bounds,
                         const LtiMatrices& lti, const SmeOptions& opts) {
  const int n = static_cast<int>(P_prev.rows());
  bounds.validate();
  require(bounds.Q.rows() == n, "noise bounds dimension mismatch");
  require(lti.C.rows() == n && lti.C.cols() == n, "C must be n x n");
  require(lti.F.rows() == n && lti.F.cols() == n, "F must be n x n");

  UpdateWorkspace w;
  w.P_prev = symmetrized(P_prev);
  if (min_eigenvalue(w.P_prev) <= 0.0)
    throw DegenerateSetError("solve_update: previous shape must be positive definite");
  w.FQF = lti.F * bounds.Q * lti.F.transpose();
  w.DRD = lti.D * bounds.R * lti.D.transpose();
  w.PC = w.P_prev * lti.C.transpose();
  w.FC = w.FQF * lti.C.transpose();
  w.CPC = lti.C * w.PC;
  w.CFC = lti.C * w.FC;
  w.trP = w.P_prev.trace();
  w.trF = w.FQF.trace();
  w.measured = lti.C.cwiseAbs().maxCoeff() > 0.0;

  // Coarse pass over the face l1 + l2 + l3 = 1, then local refinement.
  double best = std::numeric_limits<double>::infinity();
  double b1 = 0.5, b2 = 0.25;
  const int K = std::max(4, opts.coarse_divisions);
  for (int i = 1; i < K; ++i) {
    for (int j = 1; j < K - i + 1; ++j) {
      const double l1 = static_cast<double>(i) / K;
      const double l2 = static_cast<double>(j) / K;
      const double v = inner_solve(w, l1, l2, 1.0 - l1 - l2, false).value;
      if (v < best) {
        best = v;
        b1 = l1;
        b2 = l2;
      }
    }
  }

  double span = 1.5 / K;
  for (int level = 0; level < opts.refine_levels; ++level) {
    const int D = std::max(4, opts.refine_divisions);
    double n1 = b1, n2 = b2;
    for (int i = 0; i <= D; ++i) {
      for (int j = 0; j <= D; ++j) {
        double l1 = b1 + span * (2.0 * i / D - 1.0);
        double l2 = b2 + span * (2.0 * j / D - 1.0);
        l1 = std::clamp(l1, kLambdaFloor, 1.0 - 2 * kLambdaFloor);
        l2 = std::clamp(l2, kLambdaFloor, 1.0 - l1 - kLambdaFloor);
        const double l3 = 1.0 - l1 - l2;
        if (l3 < 0.0) continue;
        const double v = inner_solve(w, l1, l2, l3, false).value;
        if (v < best) {
          best = v;
          n1 = l1;
          n2 = l2;
        }
      }
    }
    b1 = n1;
    b2 = n2;
    span *= 2.5 / D;
  }

  const double l3 = std::max(0.0, 1.0 - b1 - b2);
  InnerSolution inner = inner_solve(w, b1, b2, l3, true);
  if (!std::isfinite(inner.value))
    throw SolverError("solve_update: multiplier search found no finite value");

  SmeSolution sol;
  sol.lambda1 = b1;
  sol.lambda2 = b2;
  sol.lambda3 = l3;
  sol.L = inner.L;
  Mat P = symmetrized(shape_for(w, lti, inner.L, b1, b2, l3));
  const double mineig = min_eigenvalue(P);
  if (mineig <= 0.0) {
    if (mineig <= -1e-9)
      throw DegenerateSetError("solve_update: updated shape lost definiteness");
    P += 1e-9 * Mat::Identity(n, n);
  }
  sol.P = P;
  sol.objective = P.trace();
  sol.certificate_eig = max_eigenvalue(
      assemble_lmi(w.P_prev, bounds, lti, sol.L, {b1, b2, l3}, sol.P));
  return sol;
}

std::pair<Vec, Vec> predict(const Vec& x_prev, const LtiMatrices& lti, const Vec& u_prev) {
  require(lti.B.rows() == x_prev.size() && lti.B.cols() == u_prev.size(),
          "predict: B dimension mismatch");
  require(lti.delta.size() == x_prev.size(), "predict: delta dimension mismatch");
  Vec x_pred = x_prev + lti.B * u_prev + lti.delta;
  Vec y_pred = lti.C * x_pred;
  return {x_pred, y_pred};
}

Vec correct(const Vec& x_pred, const Vec& y_pred, const Vec& y, const Mat& L) {
  require(y.size() == y_pred.size(), "correct: measurement dimension mismatch");
  require(L.rows() == x_pred.size() && L.cols() == y.size(), "correct: gain dimension mismatch");
  return x_pred + L * (y - y_pred);
}

SetMembershipEstimator::SetMembershipEstimator(NoiseBounds bounds, Ellipsoid initial,
                                               SmeOptions opts)
    : bounds_(std::move(bounds)), est_(std::move(initial)), opts_(opts) {
  bounds_.validate();
  require(bounds_.Q.rows() == est_.center.size(), "estimator dimension mismatch");
}

SetMembershipEstimator::StepResult SetMembershipEstimator::step(
    const Vec& y, const Vec& u_prev, const LtiMatrices& lti_prev,
    const LtiMatrices& lti_curr) {
  LtiMatrices merged;
  merged.B = lti_prev.B;
  merged.F = lti_prev.F;
  merged.delta = lti_prev.delta;
  merged.C = lti_curr.C;
  merged.D = lti_curr.D;

  auto [x_pred, y_pred] = predict(est_.center, merged, u_prev);
  SmeSolution sol = solve_update(est_.shape, bounds_, merged, opts_);
  Vec x_new = correct(x_pred, y_pred, y, sol.L);
  est_ = make_ellipsoid(x_new, sol.P);
  ++step_count_;

  if (debug_ != nullptr) {
    *debug_ << step_count_ << ',' << sol.lambda1 << ',' << sol.lambda2 << ','
            << sol.lambda3 << ',' << sol.objective << ',' << sol.certificate_eig;
    for (int i = 0; i < sol.L.rows(); ++i)
      for (int j = 0; j < sol.L.cols(); ++j) *debug_ << ',' << sol.L(i, j);
    *debug_ << '\n';
  }
  return {std::move(sol), std::move(x_pred), std::move(y_pred)};
}

}  // namespace mgd
