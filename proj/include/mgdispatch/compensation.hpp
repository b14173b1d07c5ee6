#pragma once

#include <stdexcept>

#include "mgdispatch/types.hpp"

namespace mgd {

// Raised when no battery is reachable on both layers (denominator of the
// compensation share is zero); the caller falls back to sigma = 0.
struct NoCompensatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Snapshot of everything the sampling-instant compensation step sees:
// planned set-points, forecast vs. actual PV availability and load, the
// state estimate, and the effective (electrical AND communication)
// connection of every unit class.
struct DeviationInput {
  Vec u_hat_s;              // planned PV set-points
  Vec u_hat_b;              // planned battery set-points
  Vec P_s_avail_actual;     // realized available PV power
  Vec P_s_avail_forecast;   // forecast available PV power
  Vec P_l_actual;           // realized load
  Vec P_l_forecast;         // forecast load
  Vec x_hat;                // SoC estimate
  VecI eff_b, eff_s, eff_l; // effective connection per unit
};

VecI effective_connection(const VecI& A, const VecI& G);

// Total forecast-deviation power divided by the reachable compensation
// weight: sigma_hat = (eff_s' dPs + eff_l' dPl) / (eff_b' lambda_b) with
// dPs = min(u_hat_s, avail_forecast) - min(u_hat_s, avail_actual) and
// dPl = load_actual - load_forecast. Throws NoCompensatorError when the
// denominator is zero.
double sigma_hat(const DeviationInput& inp, const Vec& lambda_b);

// Largest-magnitude sigma with sign(sigma) = sign(sigma_hat) and
// |sigma| <= |sigma_hat| keeping every reachable battery inside its power
// limits and one-step SoC limits. A non-empty soc_radius shrinks the SoC
// window per axis (uncertainty margin). If the uncompensated set-points
// already violate a limit, returns 0 and sets *entry_infeasible.
double feasible_sigma(double sigma_hat, const Vec& u_hat_b, const Vec& x_hat,
                      const SystemConfig& cfg, const VecI& eff_b, const Vec& lambda_b,
                      const Vec& soc_radius = Vec(), bool* entry_infeasible = nullptr);

// u_b* = u_hat_b + diag(eff_b) lambda_b sigma.
Vec compensate(const Vec& u_hat_b, double sigma, const VecI& eff_b, const Vec& lambda_b);

}  // namespace mgd
