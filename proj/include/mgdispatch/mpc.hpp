#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mgdispatch/qp.hpp"
#include "mgdispatch/types.hpp"

namespace mgd {

// Horizon data indexed n = 0..N, one row per step.
struct Forecasts {
  Mat pv_avail;  // (N+1) x n_s, forecast available PV power
  Mat load;      // (N+1) x n_l, forecast load demand
};

// Default set-point sequences assumed for units that cannot receive fresh
// commands over the horizon (communication loss). Row n applies to step n.
struct DefaultPlans {
  Mat u_s;  // (N+1) x n_s
  Mat u_b;  // (N+1) x n_b

  static DefaultPlans zeros(int N, int n_s, int n_b) {
    return {Mat::Zero(N + 1, n_s), Mat::Zero(N + 1, n_b)};
  }
};

// Assembled receding-horizon dispatch program. Decision variables cover
// only reachable units: batteries and PV with both layers connected.
// Electrically disconnected units are eliminated (zero power); reachable
// but command-deaf units contribute their default plans as constants.
struct MpcProblem {
  SystemConfig cfg;
  int N = 0;
  Vec x_hat;
  Forecasts forecasts;
  ConnectionState conn;
  GridMode mode;
  DefaultPlans defaults;
  bool soft_start = false;  // hard SoC rows relaxed because x_hat started outside

  QpProblem qp;
  double constant_cost = 0.0;

  std::vector<int> free_s, free_b;  // unit indices carrying decision variables
  Mat P_s_fixed;                    // (N+1) x n_s, known PV power of non-free units
  Mat P_b_fixed;                    // (N+1) x n_b, known battery power of non-free units

  // Variable layout helpers (time-major inputs, slacks appended).
  int stride() const;
  int idx_us(int n, int pos) const;
  int idx_ub(int n, int pos) const;
  int idx_pg(int n) const;
  int idx_slo(int n, int pos) const;
  int idx_shi(int n, int pos) const;
  int idx_relax() const;
  int num_vars() const;
};

MpcProblem build_problem(const Vec& x_hat, const Forecasts& forecasts,
                         const ConnectionState& conn_forecast, const SystemConfig& cfg,
                         const GridMode& mode, const DefaultPlans& defaults);

MpcProblem build_problem(const Vec& x_hat, const Forecasts& forecasts,
                         const ConnectionState& conn_forecast, const SystemConfig& cfg,
                         const GridMode& mode);

struct MpcSolution {
  bool feasible = false;
  std::string infeasibility_class;  // set when feasible == false

  Mat u_s, u_b;    // (N+1) x n_s / n_b set-point sequences
  Mat P_s, P_b;    // realized-power view of the plan (connection-masked)
  Vec P_g;         // (N+1), grid power per step (constant or zero by mode)
  Mat x_pred;      // (N+1) x n_b predicted SoC, row 0 = x_hat
  VecI controllable_b;  // 1 where the battery carried decision variables

  double objective = 0.0;  // includes the constant cost of fixed contributions
  bool soft_start_used = false;
  int qp_iterations = 0;
};

MpcSolution solve(const MpcProblem& problem, const QpOptions& opts = {});

// Stage cost of a candidate solution evaluated directly from its power and
// state sequences (soft SoC terms from the max() form, not the slacks).
double evaluate_cost(const MpcSolution& sol, const SystemConfig& cfg);

// Largest violation of power limits, predicted-state hard limits (for
// controllable batteries) and the balance equation across the solution.
double max_limit_violation(const MpcSolution& sol, const MpcProblem& problem);

// Per-unit plans (PV, battery) with the given origin step.
std::pair<std::vector<ControlPlan>, std::vector<ControlPlan>> extract_plan(
    const MpcSolution& sol, int origin_step);

}  // namespace mgd
