#pragma once

#include <string>
#include <vector>

#include "mgdispatch/compensation.hpp"
#include "mgdispatch/mpc.hpp"
#include "mgdispatch/profiles.hpp"
#include "mgdispatch/sme.hpp"
#include "mgdispatch/trace.hpp"
#include "mgdispatch/types.hpp"

namespace mgd {

// Everything the central controller can observe at a sampling instant.
// A-entries are inferred from message receipt, G-entries from grid-side
// sensing; actual PV availability is only valid where the PV unit is
// reachable, actual load only where the load is electrically connected.
struct Telemetry {
  ConnectionState conn;
  Vec y;                // masked battery SoC measurements
  Vec pv_avail_actual;  // per PV unit, 0 where unknown
  Vec load_actual;      // per load, 0 where disconnected
};

// Sampling-instant output: set-points dispatched at tick k.
struct Dispatch {
  Vec u_hat_s;   // PV set-points in force (delivered or fallback)
  Vec u_hat_b;   // battery set-points in force, before compensation
  Vec u_star_b;  // battery set-points after compensation
  double sigma = 0.0, sigma_hat = 0.0;
  double pg_planned = 0.0;
  unsigned flags = 0;
  // Payloads handed to reachable units this tick (plan entry 0 of the
  // battery payload carries the compensated value).
  std::vector<ControlPlan> delivered_s, delivered_b;
};

// Between-samples output: estimate correction and next plan.
struct EstimateUpdate {
  Vec x_hat;
  Mat P;
  double cert_eig = 0.0;
  bool sme_ran = false;
  unsigned flags = 0;
};

// The deviation-compensating dispatch controller. Drives one scenario;
// decide_setpoints (at tick k) and update_between_samples (the computation
// window before tick k+1) must alternate, starting from plan_initial.
class DispatchController {
 public:
  DispatchController(const SystemConfig& cfg, const GridMode& mode,
                     bool compensation_enabled, const Vec& x_hat0,
                     const ProfileData& profiles, const Vec& pv_scale,
                     const Vec& load_scale, const SmeOptions& sme_opts = {},
                     const QpOptions& qp_opts = {});

  // Initial horizon plan from x_hat(0), all units assumed reachable.
  void plan_initial();

  Dispatch decide_setpoints(int k, const Telemetry& t);
  EstimateUpdate update_between_samples(int k, const Telemetry& t);

  const Vec& x_hat() const { return estimator_.state().center; }
  const Mat& shape() const { return estimator_.state().shape; }
  const Vec& x_hat_predicted() const { return x_hat_pred_; }
  const ControlPlan& mirror_plan_s(int i) const { return plan_s_.at(i); }
  const ControlPlan& mirror_plan_b(int i) const { return plan_b_.at(i); }
  const SystemConfig& config() const { return cfg_; }
  // Binding constraint class of the last planning attempt, empty if it solved.
  const std::string& last_mpc_class() const { return last_mpc_class_; }

  void set_sme_debug_sink(std::ostream* sink) { estimator_.set_debug_sink(sink); }

 private:
  void store_next_plans(const MpcSolution& sol, int origin);
  void hold_plans(int origin);

  SystemConfig cfg_;
  GridMode mode_;
  bool compensation_enabled_;
  ProfileData profiles_;
  Vec pv_scale_, load_scale_;
  QpOptions qp_opts_;
  SetMembershipEstimator estimator_;
  Vec x_hat_pred_;  // estimate of the state at the next sampling instant

  std::vector<ControlPlan> plan_s_, plan_b_;  // mirrors of unit-held plans
  std::vector<ControlPlan> next_s_, next_b_;  // computed for the coming tick
  ControlPlan plan_pg_;                       // grid-power sequence

  // Pending phase-A context consumed by update_between_samples.
  bool dispatch_pending_ = false;
  int last_k_ = -1;
  unsigned pending_flags_ = 0;  // planning flags carried to the next record
  std::string last_mpc_class_;
  Vec u_hat_b_last_, u_star_b_last_;
  LtiMatrices lti_last_;   // dynamics in force over [k, k+1)
  LtiMatrices lti_prev_;   // dynamics over [k-1, k)
  Vec u_star_prev_;
  ConnectionState conn_last_;
};

// Forecast rows first_row..first_row+N of the base profiles, scaled per unit.
Forecasts forecast_window(const ProfileData& profiles, const Vec& pv_scale,
                          const Vec& load_scale, int first_row, int N);

// Physical quantities of the plant at one tick, collected by the harness.
struct PlantSnapshot {
  Vec x;    // true state at the tick
  Vec y;    // measurement released to the controller
  Vec P_s, P_b, P_l;
};

TraceRecord make_trace_record(int k, double T_s, const ConnectionState& conn,
                              const PlantSnapshot& plant, const Dispatch& d,
                              const EstimateUpdate& e, const GridMode& mode);

}  // namespace mgd
