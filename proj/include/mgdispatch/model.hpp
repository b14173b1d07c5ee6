#pragma once

#include <optional>

#include "mgdispatch/types.hpp"

namespace mgd {

// Effective set-point after the communication mask: connected units follow
// the commanded value, disconnected units fall back to their default plan.
Vec battery_setpoint(const Vec& u_cmd, const Vec& u_default, const VecI& A_b);

// Realized battery power through the electrical mask.
Vec battery_power(const Vec& u_hat, const VecI& G_b);

// Realized PV power: curtailed by available power, masked electrically.
Vec pv_power(const Vec& u_hat, const Vec& P_avail, const VecI& G_s);

// True SoC update x(k+1) = x(k) - T_s (P_b + w).
Vec step_dynamics(const Vec& x, const Vec& P_b, const Vec& w, double T_s);

// Measurement y = diag(A_b) (x + v).
Vec measure(const Vec& x, const Vec& v, const VecI& A_b);

// One-step model matrices for the estimator, from one connection snapshot
// and the default set-points active over the step.
LtiMatrices assemble_lti(const SystemConfig& cfg, const ConnectionState& conn,
                         const Vec& u_b_default);

// Default-plan update: replace on delivery, otherwise shift by the elapsed
// steps and hold the terminal value once the stored horizon is exhausted.
// The returned plan is rebased to origin k.
ControlPlan update_default_plan(const ControlPlan& plan,
                                const std::optional<Vec>& delivered, int k);

// Value a unit applies at step k from its stored plan.
double plan_value_at(const ControlPlan& plan, int k);

// Residual of the global balance with the given grid power.
double power_balance_residual(const Vec& P_s, const Vec& P_b, double P_g,
                              const Vec& P_l, const ConnectionState& conn);

}  // namespace mgd
