#pragma once

#include <array>
#include <iosfwd>

#include "mgdispatch/ellipsoid.hpp"
#include "mgdispatch/types.hpp"

namespace mgd {

struct SmeOptions {
  // Multiplier search: coarse grid resolution over the simplex face and the
  // number of local refinement passes around the incumbent.
  int coarse_divisions = 48;
  int refine_levels = 4;
  int refine_divisions = 16;
  double certificate_tol = 1e-7;
};

struct SmeSolution {
  Mat P;  // updated ellipsoid shape
  Mat L;  // observer gain
  double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
  double objective = 0.0;        // trace(P)
  double certificate_eig = 0.0;  // max eigenvalue of the assembled block matrix
};

// Assembles the block matrix whose negative semidefiniteness certifies that
// the one-step error set is contained in the ellipsoid of shape P:
//
//   M = [ -Psi   Phi' ]        Phi = [ (I - L C) E, (I - L C) F, -L D, 0 ]
//       [  Phi   -P   ]        Psi = diag(l1 I, l2 Q^{-1}, l3 R^{-1}, 1 - l1 - l2 - l3)
//
// where E is the lower Cholesky factor of P_prev. M <= 0 is, by a Schur
// complement, Phi' P^{-1} Phi <= Psi, which bounds the propagated error for
// every disturbance pair admitted by the noise ellipsoids.
Mat assemble_lmi(const Mat& P_prev, const NoiseBounds& bounds, const LtiMatrices& lti,
                 const Mat& L, const std::array<double, 3>& lambdas, const Mat& P);

// Trace-minimal shape update. The certificate above is affine in (P, L) and
// the multipliers enter only through Psi, so for a fixed multiplier triple
// the optimal pair is closed-form:
//
//   S  = P_prev / l1 + F Q F' / l2
//   L* = S C' (C S C' + D R D' / l3)^+
//   P* = (I - L C) S (I - L C)' + L D R D' L' / l3
//
// and the value trace(P*) is convex over the multiplier simplex (it is the
// partial minimum of a jointly convex program). solve_update minimizes it
// over the face l1 + l2 + l3 = 1 by a refined grid search; l3 = 0 forces
// L = 0 (measurements unused). Columns of L for unmeasured channels vanish
// through the pseudo-inverse. The returned P is symmetrized and carries an
// eigenvalue certificate of the assembled block matrix.
SmeSolution solve_update(const Mat& P_prev, const NoiseBounds& bounds,
                         const LtiMatrices& lti, const SmeOptions& opts = {});

// One-step prediction: x_pred = x_prev + B u_prev + delta, y_pred = C x_pred.
// B and delta describe the elapsed interval; C the new measurement instant.
std::pair<Vec, Vec> predict(const Vec& x_prev, const LtiMatrices& lti, const Vec& u_prev);

// Center correction x = x_pred + L (y - y_pred).
Vec correct(const Vec& x_pred, const Vec& y_pred, const Vec& y, const Mat& L);

// Recursive estimator maintaining the state ellipsoid across steps.
class SetMembershipEstimator {
 public:
  SetMembershipEstimator(NoiseBounds bounds, Ellipsoid initial, SmeOptions opts = {});

  const Ellipsoid& state() const { return est_; }

  struct StepResult {
    SmeSolution solution;
    Vec x_pred, y_pred;
  };

  // One recursion. lti_prev supplies B, F and delta of the elapsed interval,
  // lti_curr supplies C and D at the measurement instant.
  StepResult step(const Vec& y, const Vec& u_prev, const LtiMatrices& lti_prev,
                  const LtiMatrices& lti_curr);

  // Failure fallback: overwrite the state when a step could not complete.
  void force_state(const Ellipsoid& e) { est_ = e; }

  // Optional CSV sink receiving one row per step: k, lambdas, trace, gain.
  void set_debug_sink(std::ostream* sink) { debug_ = sink; }

 private:
  NoiseBounds bounds_;
  Ellipsoid est_;
  SmeOptions opts_;
  std::ostream* debug_ = nullptr;
  int step_count_ = 0;
};

}  // namespace mgd
