#include "mgdispatch/compensation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgd {

VecI effective_connection(const VecI& A, const VecI& G) {
  require(A.size() == G.size(), "effective_connection: length mismatch");
  VecI e(A.size());
  for (int i = 0; i < A.size(); ++i) {
    require((A[i] == 0 || A[i] == 1) && (G[i] == 0 || G[i] == 1),
            "connection entries must be 0/1");
    e[i] = A[i] & G[i];
  }
  return e;
}

double sigma_hat(const DeviationInput& inp, const Vec& lambda_b) {
  const auto n_s = inp.u_hat_s.size();
  const auto n_b = inp.u_hat_b.size();
  const auto n_l = inp.P_l_actual.size();
  require(inp.P_s_avail_actual.size() == n_s && inp.P_s_avail_forecast.size() == n_s &&
              inp.eff_s.size() == n_s,
          "sigma_hat: PV dimension mismatch");
  require(inp.P_l_forecast.size() == n_l && inp.eff_l.size() == n_l,
          "sigma_hat: load dimension mismatch");
  require(lambda_b.size() == n_b && inp.eff_b.size() == n_b,
          "sigma_hat: battery dimension mismatch");

  double denom = 0.0;
  for (int i = 0; i < n_b; ++i) denom += inp.eff_b[i] * lambda_b[i];
  if (denom <= 0.0)
    throw NoCompensatorError("no battery reachable for deviation compensation");

  double num = 0.0;
  for (int i = 0; i < n_s; ++i) {
    const double dPs = std::min(inp.u_hat_s[i], inp.P_s_avail_forecast[i]) -
                       std::min(inp.u_hat_s[i], inp.P_s_avail_actual[i]);
    num += inp.eff_s[i] * dPs;
  }
  for (int i = 0; i < n_l; ++i)
    num += inp.eff_l[i] * (inp.P_l_actual[i] - inp.P_l_forecast[i]);
  return num / denom;
}

double feasible_sigma(double sigma_hat, const Vec& u_hat_b, const Vec& x_hat,
                      const SystemConfig& cfg, const VecI& eff_b, const Vec& lambda_b,
                      const Vec& soc_radius, bool* entry_infeasible) {
  require(u_hat_b.size() == cfg.n_b && x_hat.size() == cfg.n_b &&
              eff_b.size() == cfg.n_b && lambda_b.size() == cfg.n_b,
          "feasible_sigma: dimension mismatch");
  require(soc_radius.size() == 0 || soc_radius.size() == cfg.n_b,
          "feasible_sigma: soc_radius dimension mismatch");
  if (entry_infeasible) *entry_infeasible = false;

  constexpr double kSlack = 1e-12;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg.n_b; ++i) {
    if (eff_b[i] != 1) continue;
    const double r = soc_radius.size() ? soc_radius[i] : 0.0;
    const double x_lo = cfg.x_min[i] + r;
    const double x_hi = cfg.x_max[i] - r;
    // sigma = 0 must itself be admissible for this battery.
    const double x_next = x_hat[i] - cfg.T_s * u_hat_b[i];
    if (u_hat_b[i] < cfg.P_b_min[i] - kSlack || u_hat_b[i] > cfg.P_b_max[i] + kSlack ||
        x_next < x_lo - kSlack || x_next > x_hi + kSlack) {
      if (entry_infeasible) *entry_infeasible = true;
      return 0.0;
    }
    if (lambda_b[i] <= 0.0) continue;
    lo = std::max(lo, (cfg.P_b_min[i] - u_hat_b[i]) / lambda_b[i]);
    hi = std::min(hi, (cfg.P_b_max[i] - u_hat_b[i]) / lambda_b[i]);
    // x_lo <= x_hat - T_s (u_hat + lambda sigma) <= x_hi
    lo = std::max(lo, (x_hat[i] - cfg.T_s * u_hat_b[i] - x_hi) / (cfg.T_s * lambda_b[i]));
    hi = std::min(hi, (x_hat[i] - cfg.T_s * u_hat_b[i] - x_lo) / (cfg.T_s * lambda_b[i]));
  }

  double sigma = std::clamp(sigma_hat, lo, hi);
  if (sigma * sigma_hat < 0.0) sigma = 0.0;  // interval rounded past zero
  return sigma;
}

Vec compensate(const Vec& u_hat_b, double sigma, const VecI& eff_b, const Vec& lambda_b) {
  require(u_hat_b.size() == eff_b.size() && eff_b.size() == lambda_b.size(),
          "compensate: dimension mismatch");
  require(std::isfinite(sigma), "compensate: sigma must be finite");
  Vec out = u_hat_b;
  for (int i = 0; i < u_hat_b.size(); ++i) out[i] += eff_b[i] * lambda_b[i] * sigma;
  return out;
}

}  // namespace mgd
