#include "mgdispatch/controller.hpp"

#include <cmath>
#include <utility>

#include <Eigen/Cholesky>

#include "mgdispatch/model.hpp"

namespace mgd {

namespace {

ConnectionState all_connected(const SystemConfig& cfg) {
  return ConnectionState{VecI::Ones(cfg.n_b), VecI::Ones(cfg.n_b), VecI::Ones(cfg.n_s),
                         VecI::Ones(cfg.n_s), VecI::Ones(cfg.n_l)};
}

}  // namespace

Forecasts forecast_window(const ProfileData& profiles, const Vec& pv_scale,
                          const Vec& load_scale, int first_row, int N) {
  require(first_row >= 0 && first_row + N < profiles.rows(),
          "forecast window exceeds the profile series");
  Forecasts f;
  f.pv_avail = Mat(N + 1, pv_scale.size());
  f.load = Mat(N + 1, load_scale.size());
  for (int n = 0; n <= N; ++n) {
    f.pv_avail.row(n) = profiles.pv_forecast[first_row + n] * pv_scale.transpose();
    f.load.row(n) = profiles.load_forecast[first_row + n] * load_scale.transpose();
  }
  return f;
}

DispatchController::DispatchController(const SystemConfig& cfg, const GridMode& mode,
                                       bool compensation_enabled, const Vec& x_hat0,
                                       const ProfileData& profiles, const Vec& pv_scale,
                                       const Vec& load_scale, const SmeOptions& sme_opts,
                                       const QpOptions& qp_opts)
    : cfg_(cfg),
      mode_(mode),
      compensation_enabled_(compensation_enabled),
      profiles_(profiles),
      pv_scale_(pv_scale),
      load_scale_(load_scale),
      qp_opts_(qp_opts),
      estimator_(NoiseBounds{cfg.Q, cfg.R}, make_ellipsoid(x_hat0, cfg.P0), sme_opts),
      x_hat_pred_(x_hat0) {
  cfg_.validate();
  require(x_hat0.size() == cfg.n_b, "x_hat0 dimension mismatch");
  require(pv_scale.size() == cfg.n_s && load_scale.size() == cfg.n_l,
          "profile scale dimension mismatch");
  profiles_.validate();
  for (int i = 0; i < cfg.n_s; ++i)
    plan_s_.push_back(ControlPlan{Vec::Zero(cfg.N + 1), 0});
  for (int i = 0; i < cfg.n_b; ++i)
    plan_b_.push_back(ControlPlan{Vec::Zero(cfg.N + 1), 0});
  next_s_ = plan_s_;
  next_b_ = plan_b_;
  plan_pg_ = ControlPlan{Vec::Zero(cfg.N + 1), 0};
}

void DispatchController::store_next_plans(const MpcSolution& sol, int origin) {
  auto [pv, batt] = extract_plan(sol, origin);
  next_s_ = std::move(pv);
  next_b_ = std::move(batt);
  plan_pg_ = ControlPlan{sol.P_g, origin};
}

void DispatchController::hold_plans(int origin) {
  for (int i = 0; i < cfg_.n_s; ++i)
    next_s_[i] = update_default_plan(plan_s_[i], std::nullopt, origin);
  for (int i = 0; i < cfg_.n_b; ++i)
    next_b_[i] = update_default_plan(plan_b_[i], std::nullopt, origin);
  plan_pg_ = update_default_plan(plan_pg_, std::nullopt, origin);
}

void DispatchController::plan_initial() {
  const Forecasts fc = forecast_window(profiles_, pv_scale_, load_scale_, 0, cfg_.N);
  const MpcProblem prob =
      build_problem(x_hat_pred_, fc, all_connected(cfg_), cfg_, mode_);
  MpcSolution sol;
  try {
    sol = solve(prob, qp_opts_);
  } catch (const SolverError&) {
    sol.feasible = false;
    sol.infeasibility_class = "numerical failure";
  }
  last_mpc_class_ = sol.feasible ? "" : sol.infeasibility_class;
  if (sol.feasible) {
    store_next_plans(sol, 0);
    if (prob.soft_start) pending_flags_ |= kFlagSoftStart;
  } else {
    hold_plans(0);
    pending_flags_ |= kFlagMpcFallback;
  }
}

Dispatch DispatchController::decide_setpoints(int k, const Telemetry& t) {
  require(!dispatch_pending_ && k == last_k_ + 1, "decide_setpoints called out of order");
  t.conn.validate(cfg_.n_b, cfg_.n_s, cfg_.n_l);
  require(t.y.size() == cfg_.n_b && t.pv_avail_actual.size() == cfg_.n_s &&
              t.load_actual.size() == cfg_.n_l,
          "telemetry dimension mismatch");
  const ConnectionState& conn = t.conn;

  Dispatch d;
  d.u_hat_s = Vec(cfg_.n_s);
  d.u_hat_b = Vec(cfg_.n_b);
  for (int i = 0; i < cfg_.n_s; ++i) {
    if (conn.A_s[i] == 1) {
      require(next_s_[i].origin_step == k, "stale PV plan at delivery");
      plan_s_[i] = next_s_[i];
    }
    d.u_hat_s[i] = plan_value_at(plan_s_[i], k);
  }
  for (int i = 0; i < cfg_.n_b; ++i) {
    if (conn.A_b[i] == 1)
      require(next_b_[i].origin_step == k, "stale battery plan at delivery");
    d.u_hat_b[i] = plan_value_at(conn.A_b[i] == 1 ? next_b_[i] : plan_b_[i], k);
  }

  const VecI eff_b = effective_connection(conn.A_b, conn.G_b);
  const VecI eff_s = effective_connection(conn.A_s, conn.G_s);
  const int row = k;
  const Vec pv_forecast = profiles_.pv_forecast[row] * pv_scale_;
  const Vec load_forecast = profiles_.load_forecast[row] * load_scale_;

  if (compensation_enabled_) {
    DeviationInput inp;
    inp.u_hat_s = d.u_hat_s;
    inp.u_hat_b = d.u_hat_b;
    inp.P_s_avail_actual = t.pv_avail_actual;
    inp.P_s_avail_forecast = pv_forecast;
    inp.P_l_actual = t.load_actual;
    inp.P_l_forecast = load_forecast;
    inp.x_hat = x_hat_pred_;
    inp.eff_b = eff_b;
    inp.eff_s = eff_s;
    inp.eff_l = conn.G_l;
    try {
      d.sigma_hat = sigma_hat(inp, cfg_.lambda_b);
      bool entry_infeasible = false;
      d.sigma = feasible_sigma(d.sigma_hat, d.u_hat_b, x_hat_pred_, cfg_, eff_b,
                               cfg_.lambda_b, Vec(), &entry_infeasible);
      if (entry_infeasible) d.flags |= kFlagSigmaEntryInfeasible;
      if (std::abs(d.sigma - d.sigma_hat) > 1e-12) d.flags |= kFlagSigmaSaturated;
    } catch (const NoCompensatorError&) {
      d.sigma = d.sigma_hat = 0.0;
      d.flags |= kFlagNoCompensator;
    }
  }
  d.u_star_b = compensate(d.u_hat_b, d.sigma, eff_b, cfg_.lambda_b);

  d.delivered_s = next_s_;
  d.delivered_b = next_b_;
  for (int i = 0; i < cfg_.n_b; ++i) {
    d.delivered_b[i].setpoints[0] = d.u_star_b[i];
    if (conn.A_b[i] == 1) plan_b_[i] = d.delivered_b[i];
  }
  d.pg_planned = plan_value_at(plan_pg_, k);

  u_hat_b_last_ = d.u_hat_b;
  u_star_b_last_ = d.u_star_b;
  conn_last_ = conn;
  lti_last_ = assemble_lti(cfg_, conn, d.u_hat_b);
  dispatch_pending_ = true;
  last_k_ = k;
  return d;
}

EstimateUpdate DispatchController::update_between_samples(int k, const Telemetry& t) {
  require(dispatch_pending_ && k == last_k_, "update_between_samples called out of order");
  EstimateUpdate e;
  e.flags = pending_flags_;
  pending_flags_ = 0;

  if (k >= 1) {
    try {
      auto res = estimator_.step(t.y, u_star_prev_, lti_prev_, lti_last_);
      e.cert_eig = res.solution.certificate_eig;
      e.sme_ran = true;
    } catch (const std::runtime_error&) {
      // Keep the predicted center and the stale shape; flag the miss.
      estimator_.force_state(
          Ellipsoid{x_hat_pred_, estimator_.state().shape});
      e.flags |= kFlagSmeFallback;
    }
  }
  e.x_hat = estimator_.state().center;
  e.P = estimator_.state().shape;

  x_hat_pred_ = predict(e.x_hat, lti_last_, u_star_b_last_).first;

  const Forecasts fc = forecast_window(profiles_, pv_scale_, load_scale_, k + 1, cfg_.N);
  DefaultPlans defaults = DefaultPlans::zeros(cfg_.N, cfg_.n_s, cfg_.n_b);
  for (int n = 0; n <= cfg_.N; ++n) {
    for (int i = 0; i < cfg_.n_s; ++i)
      defaults.u_s(n, i) = plan_value_at(plan_s_[i], k + 1 + n);
    for (int i = 0; i < cfg_.n_b; ++i)
      defaults.u_b(n, i) = plan_value_at(plan_b_[i], k + 1 + n);
  }
  MpcSolution sol;
  MpcProblem prob;
  try {
    prob = build_problem(x_hat_pred_, fc, conn_last_, cfg_, mode_, defaults);
    sol = solve(prob, qp_opts_);
  } catch (const SolverError&) {
    sol.feasible = false;
    sol.infeasibility_class = "numerical failure";
  }
  last_mpc_class_ = sol.feasible ? "" : sol.infeasibility_class;
  if (sol.feasible) {
    store_next_plans(sol, k + 1);
    if (prob.soft_start) e.flags |= kFlagSoftStart;
  } else {
    hold_plans(k + 1);
    e.flags |= kFlagMpcFallback;
  }

  lti_prev_ = lti_last_;
  u_star_prev_ = u_star_b_last_;
  dispatch_pending_ = false;
  return e;
}

TraceRecord make_trace_record(int k, double T_s, const ConnectionState& conn,
                              const PlantSnapshot& plant, const Dispatch& d,
                              const EstimateUpdate& e, const GridMode& mode) {
  TraceRecord r;
  r.k = k;
  r.t_hours = k * T_s;
  r.x = plant.x;
  r.x_hat = e.x_hat;
  r.P = e.P;
  r.y = plant.y;
  r.u_hat_s = d.u_hat_s;
  r.u_b_star = d.u_star_b;
  r.P_s = plant.P_s;
  r.P_b = plant.P_b;
  r.P_l = plant.P_l;

  double sum = 0.0;
  for (int i = 0; i < conn.G_s.size(); ++i) sum += conn.G_s[i] * plant.P_s[i];
  for (int i = 0; i < conn.G_b.size(); ++i) sum += conn.G_b[i] * plant.P_b[i];
  for (int i = 0; i < conn.G_l.size(); ++i) sum -= conn.G_l[i] * plant.P_l[i];
  r.P_g = mode.kind == GridMode::Kind::Islanded ? 0.0 : -sum;
  r.P_g_planned = d.pg_planned;
  r.residual = d.pg_planned + sum;

  r.sigma = d.sigma;
  r.sigma_hat = d.sigma_hat;
  r.conn = conn;

  Eigen::LLT<Mat> llt(r.P);
  if (llt.info() == Eigen::Success) {
    const Vec diff = r.x - r.x_hat;
    r.containment = diff.dot(llt.solve(diff)) <= 1.0 + 1e-9;
  }
  r.sme_cert_eig = e.cert_eig;
  r.flags = d.flags | e.flags;
  return r;
}

}  // namespace mgd
