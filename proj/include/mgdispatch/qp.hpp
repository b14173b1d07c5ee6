#pragma once

#include "mgdispatch/linalg.hpp"

namespace mgd {

// Convex quadratic program
//   minimize    0.5 x' H x + f' x
//   subject to  A x  = b
//               G x <= h
// with H symmetric positive semidefinite.
struct QpProblem {
  Mat H;
  Vec f;
  Mat A;
  Vec b;
  Mat G;
  Vec h;

  int num_vars() const { return static_cast<int>(f.size()); }
};

struct QpOptions {
  int max_iterations = 100;
  double feas_tol = 1e-9;
  double gap_tol = 1e-10;
  double fraction_to_boundary = 0.995;
};

struct QpResult {
  enum class Status { Optimal, MaxIterations, PrimalInfeasible, NumericalFailure };
  Status status = Status::NumericalFailure;
  Vec x;
  Vec y;  // equality multipliers
  Vec z;  // inequality multipliers, z >= 0
  Vec s;  // inequality slacks, s >= 0
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
};

// Dense Mehrotra predictor-corrector interior-point method. Suited to the
// small, well-scaled programs produced by the dispatch builder (a few
// hundred variables and rows).
QpResult solve_qp(const QpProblem& qp, const QpOptions& opts = {});

}  // namespace mgd
