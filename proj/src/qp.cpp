// Dense predictor-corrector interior point for convex QP.
//
// The Newton direction is obtained from the condensed augmented system
//
//   [ H + G' W G   A' ] [dx]   [ r1 ]          W = diag(z / s)
//   [ A            0  ] [dy] = [ r2 ]
//
// after eliminating the slack and inequality-multiplier blocks. The system
// is regularized into quasi-definite form and factored with LDLT; one pass
// of iterative refinement keeps the direction accurate enough for the
// 1e-9 feasibility targets used by the dispatch layer.

#include "mgdispatch/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgd {

namespace {

struct Residuals {
  Vec rd, re, ri, rc;
  double mu = 0.0;
};

Residuals compute_residuals(const QpProblem& qp, const Vec& x, const Vec& y,
                            const Vec& z, const Vec& s) {
  Residuals r;
  r.rd = qp.H * x + qp.f;
  if (qp.A.rows() > 0) r.rd += qp.A.transpose() * y;
  if (qp.G.rows() > 0) r.rd += qp.G.transpose() * z;
  r.re = qp.A.rows() > 0 ? Vec(qp.A * x - qp.b) : Vec();
  r.ri = qp.G.rows() > 0 ? Vec(qp.G * x + s - qp.h) : Vec();
  r.rc = qp.G.rows() > 0 ? Vec(z.cwiseProduct(s)) : Vec();
  r.mu = qp.G.rows() > 0 ? r.rc.sum() / static_cast<double>(qp.G.rows()) : 0.0;
  return r;
}

double step_to_boundary(const Vec& v, const Vec& dv, double tau) {
  double alpha = 1.0;
  for (int i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -tau * v[i] / dv[i]);
  return alpha;
}

}  // namespace

QpResult solve_qp(const QpProblem& qp, const QpOptions& opts) {
  const int n = qp.num_vars();
  const int me = static_cast<int>(qp.A.rows());
  const int mi = static_cast<int>(qp.G.rows());
  require(qp.H.rows() == n && qp.H.cols() == n, "solve_qp: H dimension mismatch");
  require(me == 0 || qp.A.cols() == n, "solve_qp: A dimension mismatch");
  require(qp.b.size() == me, "solve_qp: b dimension mismatch");
  require(mi == 0 || qp.G.cols() == n, "solve_qp: G dimension mismatch");
  require(qp.h.size() == mi, "solve_qp: h dimension mismatch");

  QpResult out;
  const double scale_p =
      1.0 + std::max(me > 0 ? qp.b.cwiseAbs().maxCoeff() : 0.0,
                     mi > 0 ? qp.h.cwiseAbs().maxCoeff() : 0.0);
  const double scale_d = 1.0 + qp.f.cwiseAbs().maxCoeff();
  const double reg = 1e-11;

  const int dim = n + me;
  Mat kkt = Mat::Zero(dim, dim);
  Vec rhs(dim), sol(dim);

  auto factor_solve = [&](const Mat& hw, const Vec& r1, const Vec& r2, Vec* dx,
                          Vec* dy) -> bool {
    kkt.topLeftCorner(n, n) = hw + reg * Mat::Identity(n, n);
    if (me > 0) {
      kkt.topRightCorner(n, me) = qp.A.transpose();
      kkt.bottomLeftCorner(me, n) = qp.A;
      kkt.bottomRightCorner(me, me) = -reg * Mat::Identity(me, me);
    }
    rhs.head(n) = r1;
    if (me > 0) rhs.tail(me) = r2;
    Eigen::LDLT<Mat> ldlt(kkt);
    if (ldlt.info() != Eigen::Success) return false;
    sol = ldlt.solve(rhs);
    sol += ldlt.solve(rhs - kkt * sol);  // two refinement passes
    sol += ldlt.solve(rhs - kkt * sol);
    if (!sol.allFinite()) return false;
    *dx = sol.head(n);
    if (me > 0) *dy = sol.tail(me);
    return true;
  };

  // Starting point: equality-consistent x, padded slacks, unit multipliers.
  Vec x(n), y = Vec::Zero(me), z, s;
  {
    Mat h0 = qp.H + 1e-6 * Mat::Identity(n, n);
    Vec dx, dy = Vec::Zero(me);
    if (!factor_solve(h0, -qp.f, me > 0 ? Vec(qp.b) : Vec(), &dx, &dy)) {
      out.status = QpResult::Status::NumericalFailure;
      return out;
    }
    x = dx;
    if (me > 0) y = dy;
  }
  if (mi > 0) {
    Vec gap = qp.h - qp.G * x;
    s = Vec(mi);
    z = Vec(mi);
    for (int i = 0; i < mi; ++i) {
      s[i] = std::max(gap[i], 0.1 * (1.0 + std::abs(qp.h[i])));
      z[i] = 1.0;
    }
  } else {
    // No inequalities: one unregularized KKT solve finishes the problem
    // (the seed above factored H + 1e-6 I, which is not exact enough).
    Vec dx, dy = Vec::Zero(me);
    if (factor_solve(qp.H, -qp.f, me > 0 ? Vec(qp.b) : Vec(), &dx, &dy)) {
      x = dx;
      if (me > 0) y = dy;
    }
    Residuals r = compute_residuals(qp, x, y, z, s);
    const double re_inf = me > 0 ? r.re.cwiseAbs().maxCoeff() : 0.0;
    out.status = (r.rd.cwiseAbs().maxCoeff() <= 1e-6 * scale_d &&
                  re_inf <= 1e-6 * scale_p)
                     ? QpResult::Status::Optimal
                     : QpResult::Status::NumericalFailure;
    out.x = x;
    out.y = y;
    out.objective = 0.5 * x.dot(qp.H * x) + qp.f.dot(x);
    out.dual_residual = r.rd.cwiseAbs().maxCoeff();
    out.primal_residual = me > 0 ? r.re.cwiseAbs().maxCoeff() : 0.0;
    return out;
  }

  const double z_cap = 1e10 * scale_d;
  double best_primal = std::numeric_limits<double>::infinity();
  int stalled = 0;

  // Best iterate seen, as a multiple of the target tolerances. If the solver
  // cannot reach full accuracy (double-precision floor on badly scaled
  // penalty problems), a near-miss is still returned as solved.
  double best_metric = std::numeric_limits<double>::infinity();
  Vec x_best, y_best, z_best, s_best;
  double rp_best = 0.0, rd_best = 0.0, mu_best = 0.0;

  for (int it = 0; it < opts.max_iterations; ++it) {
    Residuals r = compute_residuals(qp, x, y, z, s);
    const double rp = std::max(me > 0 ? r.re.cwiseAbs().maxCoeff() : 0.0,
                               r.ri.cwiseAbs().maxCoeff());
    const double rd = r.rd.cwiseAbs().maxCoeff();
    out.iterations = it;
    out.primal_residual = rp;
    out.dual_residual = rd;
    out.gap = r.mu;

    const double obj_scale = 1.0 + std::abs(0.5 * x.dot(qp.H * x) + qp.f.dot(x));
    const double metric =
        std::max({rp / (opts.feas_tol * scale_p), rd / (opts.feas_tol * scale_d),
                  r.mu / (opts.gap_tol * obj_scale)});
    if (metric < best_metric) {
      best_metric = metric;
      x_best = x;
      y_best = y;
      z_best = z;
      s_best = s;
      rp_best = rp;
      rd_best = rd;
      mu_best = r.mu;
    }
    if (metric <= 1.0) {
      out.status = QpResult::Status::Optimal;
      break;
    }

    // Divergence heuristics: exploding multipliers with stuck primal
    // residual indicate an infeasible program.
    if (z.maxCoeff() > z_cap) {
      out.status = QpResult::Status::PrimalInfeasible;
      break;
    }
    if (rp < best_primal * 0.999) {
      best_primal = rp;
      stalled = 0;
    } else if (++stalled > 12 && rp > 1e-6 * scale_p && r.mu < 1e-9 * obj_scale) {
      out.status = QpResult::Status::PrimalInfeasible;
      break;
    }

    Vec w = z.cwiseQuotient(s);
    Mat hw = qp.H + qp.G.transpose() * w.asDiagonal() * qp.G;

    auto assemble_r1 = [&](const Vec& rc_vec) {
      return Vec(-r.rd + qp.G.transpose() *
                             (rc_vec.cwiseQuotient(s) - w.cwiseProduct(r.ri)));
    };

    // Affine (predictor) direction.
    Vec dx_a, dy_a = Vec::Zero(me);
    if (!factor_solve(hw, assemble_r1(r.rc), me > 0 ? Vec(-r.re) : Vec(), &dx_a, &dy_a)) {
      out.status = QpResult::Status::NumericalFailure;
      break;
    }
    Vec ds_a = -r.ri - qp.G * dx_a;
    Vec dz_a = (-r.rc - z.cwiseProduct(ds_a)).cwiseQuotient(s);

    const double ap_a = step_to_boundary(s, ds_a, 1.0);
    const double ad_a = step_to_boundary(z, dz_a, 1.0);
    const double mu_aff =
        (s + ap_a * ds_a).dot(z + ad_a * dz_a) / static_cast<double>(mi);
    const double sigma = std::pow(std::max(mu_aff, 0.0) / std::max(r.mu, 1e-300), 3.0);

    // Corrector direction.
    Vec rc_corr = r.rc + ds_a.cwiseProduct(dz_a) -
                  Vec::Constant(mi, sigma * r.mu);
    Vec dx, dy = Vec::Zero(me);
    if (!factor_solve(hw, assemble_r1(rc_corr), me > 0 ? Vec(-r.re) : Vec(), &dx, &dy)) {
      out.status = QpResult::Status::NumericalFailure;
      break;
    }
    Vec ds = -r.ri - qp.G * dx;
    Vec dz = (-rc_corr - z.cwiseProduct(ds)).cwiseQuotient(s);

    const double tau = opts.fraction_to_boundary;
    const double ap = step_to_boundary(s, ds, tau);
    const double ad = step_to_boundary(z, dz, tau);
    x += ap * dx;
    s += ap * ds;
    y += ad * dy;
    z += ad * dz;

    if (it + 1 == opts.max_iterations) out.status = QpResult::Status::MaxIterations;
  }

  out.x = x;
  out.y = y;
  out.z = z;
  out.s = s;
  if (out.status != QpResult::Status::Optimal && best_metric <= 100.0) {
    out.status = QpResult::Status::Optimal;
    out.x = x_best;
    out.y = y_best;
    out.z = z_best;
    out.s = s_best;
    out.primal_residual = rp_best;
    out.dual_residual = rd_best;
    out.gap = mu_best;
  }
  out.objective = 0.5 * out.x.dot(qp.H * out.x) + qp.f.dot(out.x);
  return out;
}

}  // namespace mgd
