#include "mgdispatch/mpc.hpp"

#include <algorithm>
#include <cmath>

namespace mgd {

namespace {

double soft_excess(double x, double lo, double hi) {
  return std::max(lo - x, 0.0) + std::max(x - hi, 0.0);
}

}  // namespace

int MpcProblem::stride() const {
  return static_cast<int>(free_s.size() + free_b.size()) +
         (mode.kind == GridMode::Kind::GridVariable ? 1 : 0);
}
int MpcProblem::idx_us(int n, int pos) const { return n * stride() + pos; }
int MpcProblem::idx_ub(int n, int pos) const {
  return n * stride() + static_cast<int>(free_s.size()) + pos;
}
int MpcProblem::idx_pg(int n) const {
  return n * stride() + static_cast<int>(free_s.size() + free_b.size());
}
int MpcProblem::idx_slo(int n, int pos) const {
  return (N + 1) * stride() + (n - 1) * 2 * static_cast<int>(free_b.size()) + pos;
}
int MpcProblem::idx_shi(int n, int pos) const {
  return idx_slo(n, pos) + static_cast<int>(free_b.size());
}
int MpcProblem::idx_relax() const {
  return (N + 1) * stride() + N * 2 * static_cast<int>(free_b.size());
}
int MpcProblem::num_vars() const { return idx_relax() + (soft_start ? 1 : 0); }

MpcProblem build_problem(const Vec& x_hat, const Forecasts& forecasts,
                         const ConnectionState& conn_forecast, const SystemConfig& cfg,
                         const GridMode& mode) {
  return build_problem(x_hat, forecasts, conn_forecast, cfg, mode,
                       DefaultPlans::zeros(static_cast<int>(forecasts.load.rows()) - 1,
                                           cfg.n_s, cfg.n_b));
}

MpcProblem build_problem(const Vec& x_hat, const Forecasts& forecasts,
                         const ConnectionState& conn_forecast, const SystemConfig& cfg,
                         const GridMode& mode, const DefaultPlans& defaults) {
  MpcProblem p;
  p.cfg = cfg;
  p.N = static_cast<int>(forecasts.load.rows()) - 1;
  require(p.N >= 0, "forecast horizon must cover at least one step");
  require(forecasts.pv_avail.rows() == p.N + 1, "forecast row count mismatch");
  require(forecasts.pv_avail.cols() == cfg.n_s && forecasts.load.cols() == cfg.n_l,
          "forecast column count mismatch");
  require(x_hat.size() == cfg.n_b, "x_hat dimension mismatch");
  require(defaults.u_s.rows() == p.N + 1 && defaults.u_b.rows() == p.N + 1,
          "default plan row count mismatch");
  conn_forecast.validate(cfg.n_b, cfg.n_s, cfg.n_l);

  p.x_hat = x_hat;
  p.forecasts = forecasts;
  p.conn = conn_forecast;
  p.mode = mode;
  p.defaults = defaults;

  for (int i = 0; i < cfg.n_s; ++i)
    if (conn_forecast.A_s[i] == 1 && conn_forecast.G_s[i] == 1) p.free_s.push_back(i);
  for (int i = 0; i < cfg.n_b; ++i)
    if (conn_forecast.A_b[i] == 1 && conn_forecast.G_b[i] == 1) p.free_b.push_back(i);

  for (int i = 0; i < cfg.n_b; ++i)
    if (x_hat[i] < cfg.x_min[i] || x_hat[i] > cfg.x_max[i]) p.soft_start = true;

  const int NP = p.N + 1;
  const int nsf = static_cast<int>(p.free_s.size());
  const int nbf = static_cast<int>(p.free_b.size());
  const bool pg = mode.kind == GridMode::Kind::GridVariable;

  // Known power contributions of units outside the decision set.
  p.P_s_fixed = Mat::Zero(NP, cfg.n_s);
  p.P_b_fixed = Mat::Zero(NP, cfg.n_b);
  for (int i = 0; i < cfg.n_s; ++i) {
    if (conn_forecast.G_s[i] == 0 || conn_forecast.A_s[i] == 1) continue;
    for (int n = 0; n < NP; ++n)
      p.P_s_fixed(n, i) = std::min(defaults.u_s(n, i), forecasts.pv_avail(n, i));
  }
  for (int i = 0; i < cfg.n_b; ++i) {
    if (conn_forecast.G_b[i] == 0 || conn_forecast.A_b[i] == 1) continue;
    for (int n = 0; n < NP; ++n) p.P_b_fixed(n, i) = defaults.u_b(n, i);
  }

  const int nv = p.num_vars();
  const int n_eq = NP;
  const int n_in = 2 * NP * nsf + 2 * NP * nbf + 2 * NP * nbf + 4 * p.N * nbf +
                   (p.soft_start ? 1 : 0);

  QpProblem& qp = p.qp;
  qp.H = Mat::Zero(nv, nv);
  qp.f = Vec::Zero(nv);
  qp.A = Mat::Zero(n_eq, nv);
  qp.b = Vec::Zero(n_eq);
  qp.G = Mat::Zero(n_in, nv);
  qp.h = Vec::Zero(n_in);

  // Objective: PV reward, battery throughput, soft SoC slacks, grid terms.
  for (int n = 0; n < NP; ++n) {
    for (int j = 0; j < nsf; ++j) qp.f[p.idx_us(n, j)] = -cfg.C_s[p.free_s[j]];
    for (int j = 0; j < nbf; ++j)
      qp.H(p.idx_ub(n, j), p.idx_ub(n, j)) = 2.0 * cfg.C_b1[p.free_b[j]];
    if (pg) {
      qp.H(p.idx_pg(n), p.idx_pg(n)) = 2.0 * cfg.C_g1;
      qp.f[p.idx_pg(n)] = cfg.C_g2;
    }
  }
  for (int n = 1; n <= p.N; ++n)
    for (int j = 0; j < nbf; ++j) {
      qp.H(p.idx_slo(n, j), p.idx_slo(n, j)) = 2.0 * cfg.C_b2[p.free_b[j]];
      qp.H(p.idx_shi(n, j), p.idx_shi(n, j)) = 2.0 * cfg.C_b2[p.free_b[j]];
    }
  if (p.soft_start) {
    qp.H(p.idx_relax(), p.idx_relax()) = 2.0 * 1e4;
    qp.f[p.idx_relax()] = 1e4;
  }

  // Constant cost of everything outside the decision set.
  double cc = 0.0;
  for (int n = 0; n < NP; ++n) {
    for (int i = 0; i < cfg.n_s; ++i)
      if (conn_forecast.A_s[i] == 0 || conn_forecast.G_s[i] == 0)
        cc -= cfg.C_s[i] * p.P_s_fixed(n, i);
    for (int i = 0; i < cfg.n_b; ++i)
      if (conn_forecast.A_b[i] == 0 || conn_forecast.G_b[i] == 0)
        cc += cfg.C_b1[i] * p.P_b_fixed(n, i) * p.P_b_fixed(n, i);
    if (mode.kind == GridMode::Kind::GridFixed)
      cc += cfg.C_g1 * mode.fixed_value * mode.fixed_value + cfg.C_g2 * mode.fixed_value;
  }
  // Soft SoC cost along non-decision trajectories, plus the fixed n = 0 term.
  for (int i = 0; i < cfg.n_b; ++i) {
    const bool is_free = conn_forecast.A_b[i] == 1 && conn_forecast.G_b[i] == 1;
    double xi = x_hat[i];
    double e0 = soft_excess(xi, cfg.x_b_min[i], cfg.x_b_max[i]);
    cc += cfg.C_b2[i] * e0 * e0;
    if (is_free) continue;
    for (int n = 1; n <= p.N; ++n) {
      xi -= cfg.T_s * p.P_b_fixed(n - 1, i);
      const double e = soft_excess(xi, cfg.x_b_min[i], cfg.x_b_max[i]);
      cc += cfg.C_b2[i] * e * e;
    }
  }
  p.constant_cost = cc;

  // Balance equality per step.
  for (int n = 0; n < NP; ++n) {
    for (int j = 0; j < nsf; ++j) qp.A(n, p.idx_us(n, j)) = 1.0;
    for (int j = 0; j < nbf; ++j) qp.A(n, p.idx_ub(n, j)) = 1.0;
    if (pg) qp.A(n, p.idx_pg(n)) = 1.0;
    double rhs = 0.0;
    for (int i = 0; i < cfg.n_l; ++i)
      rhs += conn_forecast.G_l[i] * forecasts.load(n, i);
    for (int i = 0; i < cfg.n_s; ++i) rhs -= p.P_s_fixed(n, i);
    for (int i = 0; i < cfg.n_b; ++i) rhs -= p.P_b_fixed(n, i);
    if (mode.kind == GridMode::Kind::GridFixed) rhs -= mode.fixed_value;
    qp.b[n] = rhs;
  }

  int row = 0;
  auto bound_row = [&](int var, double coef, double limit) {
    qp.G(row, var) = coef;
    qp.h[row] = limit;
    ++row;
  };

  // Input bounds.
  for (int n = 0; n < NP; ++n) {
    for (int j = 0; j < nsf; ++j) {
      const int i = p.free_s[j];
      const double hi = std::min(cfg.P_s_max[i], forecasts.pv_avail(n, i));
      const double lo = std::min(cfg.P_s_min[i], hi);
      bound_row(p.idx_us(n, j), 1.0, hi);
      bound_row(p.idx_us(n, j), -1.0, -lo);
    }
    for (int j = 0; j < nbf; ++j) {
      const int i = p.free_b[j];
      bound_row(p.idx_ub(n, j), 1.0, cfg.P_b_max[i]);
      bound_row(p.idx_ub(n, j), -1.0, -cfg.P_b_min[i]);
    }
  }

  // Hard SoC limits on predicted states n = 1..N+1:
  //   x_i(n) = x_hat_i - T_s * sum_{m<n} u_b_i(m).
  for (int n = 1; n <= NP; ++n) {
    for (int j = 0; j < nbf; ++j) {
      const int i = p.free_b[j];
      // upper: -T_s sum u <= x_max - x_hat (+ relax)
      for (int m = 0; m < n; ++m) qp.G(row, p.idx_ub(m, j)) = -cfg.T_s;
      if (p.soft_start) qp.G(row, p.idx_relax()) = -1.0;
      qp.h[row] = cfg.x_max[i] - x_hat[i];
      ++row;
      // lower: T_s sum u <= x_hat - x_min (+ relax)
      for (int m = 0; m < n; ++m) qp.G(row, p.idx_ub(m, j)) = cfg.T_s;
      if (p.soft_start) qp.G(row, p.idx_relax()) = -1.0;
      qp.h[row] = x_hat[i] - cfg.x_min[i];
      ++row;
    }
  }

  // Soft SoC coupling and slack nonnegativity, n = 1..N.
  for (int n = 1; n <= p.N; ++n) {
    for (int j = 0; j < nbf; ++j) {
      const int i = p.free_b[j];
      // s_lo >= x_b_min - x(n):  T_s sum u - s_lo <= x_hat - x_b_min
      for (int m = 0; m < n; ++m) qp.G(row, p.idx_ub(m, j)) = cfg.T_s;
      qp.G(row, p.idx_slo(n, j)) = -1.0;
      qp.h[row] = x_hat[i] - cfg.x_b_min[i];
      ++row;
      // s_hi >= x(n) - x_b_max: -T_s sum u - s_hi <= x_b_max - x_hat
      for (int m = 0; m < n; ++m) qp.G(row, p.idx_ub(m, j)) = -cfg.T_s;
      qp.G(row, p.idx_shi(n, j)) = -1.0;
      qp.h[row] = cfg.x_b_max[i] - x_hat[i];
      ++row;
      bound_row(p.idx_slo(n, j), -1.0, 0.0);
      bound_row(p.idx_shi(n, j), -1.0, 0.0);
    }
  }
  if (p.soft_start) bound_row(p.idx_relax(), -1.0, 0.0);
  require(row == n_in, "internal row count mismatch in build_problem");
  return p;
}

namespace {

MpcSolution assemble_solution(const MpcProblem& p, const Vec& x, double qp_objective,
                              int iterations) {
  const SystemConfig& cfg = p.cfg;
  const int NP = p.N + 1;
  MpcSolution s;
  s.feasible = true;
  s.qp_iterations = iterations;
  s.soft_start_used = p.soft_start;
  s.u_s = Mat::Zero(NP, cfg.n_s);
  s.u_b = Mat::Zero(NP, cfg.n_b);
  s.P_g = Vec::Zero(NP);
  s.controllable_b = VecI::Zero(cfg.n_b);

  for (int n = 0; n < NP; ++n) {
    for (size_t j = 0; j < p.free_s.size(); ++j)
      s.u_s(n, p.free_s[j]) = x[p.idx_us(n, static_cast<int>(j))];
    for (size_t j = 0; j < p.free_b.size(); ++j)
      s.u_b(n, p.free_b[j]) = x[p.idx_ub(n, static_cast<int>(j))];
    if (p.mode.kind == GridMode::Kind::GridVariable)
      s.P_g[n] = x[p.idx_pg(n)];
    else if (p.mode.kind == GridMode::Kind::GridFixed)
      s.P_g[n] = p.mode.fixed_value;
  }
  for (int i : p.free_b) s.controllable_b[i] = 1;

  // Non-decision units keep their known sequences in the set-point view.
  for (int i = 0; i < cfg.n_s; ++i) {
    if (p.conn.A_s[i] == 1 && p.conn.G_s[i] == 1) continue;
    if (p.conn.G_s[i] == 0) continue;  // eliminated: all-zero plan
    for (int n = 0; n < NP; ++n) s.u_s(n, i) = p.defaults.u_s(n, i);
  }
  for (int i = 0; i < cfg.n_b; ++i) {
    if (p.conn.A_b[i] == 1 && p.conn.G_b[i] == 1) continue;
    if (p.conn.G_b[i] == 0) continue;
    for (int n = 0; n < NP; ++n) s.u_b(n, i) = p.defaults.u_b(n, i);
  }

  // Power view and predicted states.
  s.P_s = Mat::Zero(NP, cfg.n_s);
  s.P_b = Mat::Zero(NP, cfg.n_b);
  for (int n = 0; n < NP; ++n) {
    for (int i = 0; i < cfg.n_s; ++i) {
      if (p.conn.G_s[i] == 0) continue;
      s.P_s(n, i) = (p.conn.A_s[i] == 1)
                        ? s.u_s(n, i)
                        : std::min(s.u_s(n, i), p.forecasts.pv_avail(n, i));
    }
    for (int i = 0; i < cfg.n_b; ++i)
      if (p.conn.G_b[i] == 1) s.P_b(n, i) = s.u_b(n, i);
  }
  s.x_pred = Mat::Zero(NP, cfg.n_b);
  s.x_pred.row(0) = p.x_hat.transpose();
  for (int n = 1; n < NP; ++n)
    s.x_pred.row(n) =
        s.x_pred.row(n - 1) - cfg.T_s * s.P_b.row(n - 1);

  s.objective = qp_objective + p.constant_cost;
  return s;
}

// Elastic reformulation used both to classify infeasibility and to recover
// from conservative solver failures: balance rows gain signed slack pairs,
// hard SoC rows a shared relaxation variable, all heavily penalized.
struct ElasticOutcome {
  bool solved = false;
  double balance_use = 0.0;
  double soc_use = 0.0;
  Vec x;  // original variables
  int iterations = 0;
};

ElasticOutcome elastic_probe(const MpcProblem& p, const QpOptions& opts) {
  const QpProblem& base = p.qp;
  const int nv = base.num_vars();
  const int me = static_cast<int>(base.A.rows());
  const int mi = static_cast<int>(base.G.rows());
  const int nbf = static_cast<int>(p.free_b.size());
  const int n_soc = 2 * (p.N + 1) * nbf;
  const int soc_row0 = 2 * (p.N + 1) * (static_cast<int>(p.free_s.size()) + nbf);

  QpProblem e;
  const int nv2 = nv + 2 * me + 1;  // e+, e- per equality, shared SoC relax
  e.H = Mat::Zero(nv2, nv2);
  e.H.topLeftCorner(nv, nv) = base.H;
  e.f = Vec::Zero(nv2);
  e.f.head(nv) = base.f;
  for (int i = 0; i < 2 * me + 1; ++i) {
    e.f[nv + i] = 1e4;
    e.H(nv + i, nv + i) = 2.0;
  }

  e.A = Mat::Zero(me, nv2);
  e.A.leftCols(nv) = base.A;
  for (int i = 0; i < me; ++i) {
    e.A(i, nv + 2 * i) = 1.0;
    e.A(i, nv + 2 * i + 1) = -1.0;
  }
  e.b = base.b;

  const int relax = nv + 2 * me;
  e.G = Mat::Zero(mi + 2 * me + 1, nv2);
  e.h = Vec::Zero(mi + 2 * me + 1);
  e.G.topLeftCorner(mi, nv) = base.G;
  e.h.head(mi) = base.h;
  for (int r = soc_row0; r < soc_row0 + n_soc; ++r) e.G(r, relax) = -1.0;
  for (int i = 0; i < 2 * me + 1; ++i) {
    e.G(mi + i, nv + i) = -1.0;  // elastic variables nonnegative
  }

  QpOptions eo = opts;
  eo.max_iterations = 200;
  QpResult res = solve_qp(e, eo);
  ElasticOutcome out;
  if (res.status != QpResult::Status::Optimal) return out;
  out.solved = true;
  out.iterations = res.iterations;
  out.x = res.x.head(nv);
  for (int i = 0; i < 2 * me; ++i) out.balance_use = std::max(out.balance_use, res.x[nv + i]);
  out.soc_use = res.x[relax];
  return out;
}

}  // namespace

MpcSolution solve(const MpcProblem& problem, const QpOptions& opts) {
  QpResult res = solve_qp(problem.qp, opts);
  if (res.status == QpResult::Status::Optimal)
    return assemble_solution(problem, res.x, res.objective, res.iterations);

  ElasticOutcome probe = elastic_probe(problem, opts);
  if (probe.solved && probe.balance_use <= 1e-7 && probe.soc_use <= 1e-7) {
    // The program was feasible after all; keep the recovered point.
    const Vec& x = probe.x;
    const double obj = 0.5 * x.dot(problem.qp.H * x) + problem.qp.f.dot(x);
    return assemble_solution(problem, x, obj, probe.iterations);
  }

  MpcSolution s;
  s.feasible = false;
  if (!probe.solved) {
    s.infeasibility_class = "numerical failure";
  } else if (probe.balance_use >= probe.soc_use) {
    s.infeasibility_class = "power balance";
  } else {
    s.infeasibility_class = "state-of-charge limits";
  }
  return s;
}

double evaluate_cost(const MpcSolution& sol, const SystemConfig& cfg) {
  require(sol.feasible, "evaluate_cost on an infeasible solution");
  const int NP = static_cast<int>(sol.P_b.rows());
  double total = 0.0;
  for (int n = 0; n < NP; ++n) {
    for (int i = 0; i < cfg.n_s; ++i) total -= cfg.C_s[i] * sol.P_s(n, i);
    for (int i = 0; i < cfg.n_b; ++i) {
      total += cfg.C_b1[i] * sol.P_b(n, i) * sol.P_b(n, i);
      const double e = soft_excess(sol.x_pred(n, i), cfg.x_b_min[i], cfg.x_b_max[i]);
      total += cfg.C_b2[i] * e * e;
    }
    total += cfg.C_g1 * sol.P_g[n] * sol.P_g[n] + cfg.C_g2 * sol.P_g[n];
  }
  return total;
}

double max_limit_violation(const MpcSolution& sol, const MpcProblem& problem) {
  require(sol.feasible, "max_limit_violation on an infeasible solution");
  const SystemConfig& cfg = problem.cfg;
  const int NP = static_cast<int>(sol.P_b.rows());
  double worst = 0.0;
  auto track = [&worst](double v) { worst = std::max(worst, v); };

  for (int n = 0; n < NP; ++n) {
    for (int i = 0; i < cfg.n_s; ++i) {
      track(sol.P_s(n, i) - cfg.P_s_max[i]);
      if (problem.conn.G_s[i] == 1 && problem.conn.A_s[i] == 1) {
        track(cfg.P_s_min[i] - sol.P_s(n, i));
        track(sol.P_s(n, i) - problem.forecasts.pv_avail(n, i));
      }
    }
    for (int i = 0; i < cfg.n_b; ++i) {
      track(sol.P_b(n, i) - cfg.P_b_max[i]);
      track(cfg.P_b_min[i] - sol.P_b(n, i));
      if (sol.controllable_b[i] == 1 && n >= 1) {
        track(sol.x_pred(n, i) - cfg.x_max[i]);
        track(cfg.x_min[i] - sol.x_pred(n, i));
      }
    }
    double balance = sol.P_g[n];
    for (int i = 0; i < cfg.n_s; ++i) balance += problem.conn.G_s[i] * sol.P_s(n, i);
    for (int i = 0; i < cfg.n_b; ++i) balance += problem.conn.G_b[i] * sol.P_b(n, i);
    for (int i = 0; i < cfg.n_l; ++i)
      balance -= problem.conn.G_l[i] * problem.forecasts.load(n, i);
    track(std::abs(balance));
  }
  for (int i = 0; i < cfg.n_b; ++i) {
    if (sol.controllable_b[i] != 1) continue;
    const double x_term = sol.x_pred(NP - 1, i) - cfg.T_s * sol.P_b(NP - 1, i);
    track(x_term - cfg.x_max[i]);
    track(cfg.x_min[i] - x_term);
  }
  return worst;
}

std::pair<std::vector<ControlPlan>, std::vector<ControlPlan>> extract_plan(
    const MpcSolution& sol, int origin_step) {
  require(sol.feasible, "extract_plan on an infeasible solution");
  std::vector<ControlPlan> pv, batt;
  for (int i = 0; i < sol.u_s.cols(); ++i)
    pv.push_back(ControlPlan{sol.u_s.col(i), origin_step});
  for (int i = 0; i < sol.u_b.cols(); ++i)
    batt.push_back(ControlPlan{sol.u_b.col(i), origin_step});
  return {pv, batt};
}

}  // namespace mgd
