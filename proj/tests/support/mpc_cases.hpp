#pragma once

// Randomized single-unit planning instances small enough for exhaustive
// grid enumeration, shared by the module tests and the acceptance suite.

#include <random>

#include "mgdispatch/mpc.hpp"
#include "support/oracles.hpp"

namespace mpc_cases {

struct TinyDraw {
  mgd::SystemConfig cfg;
  mgd::Forecasts fc;
  double x0 = 0;
  mgd::GridMode mode = mgd::GridMode::islanded();
};

inline mgd::Mat m1(double v) { return (mgd::Mat(1, 1) << v).finished(); }
inline mgd::Vec v1(double v) { return (mgd::Vec(1) << v).finished(); }

inline mgd::SystemConfig tiny_config(int N, double u_s_max, double u_b_lim,
                                     double x_b_min, double x_b_max, double C_s,
                                     double C_b1, double C_b2) {
  mgd::SystemConfig cfg;
  cfg.n_b = cfg.n_s = cfg.n_l = 1;
  cfg.T_s = 0.25;
  cfg.N = N;
  cfg.P_s_min = v1(0.0);
  cfg.P_s_max = v1(u_s_max);
  cfg.P_b_min = v1(-u_b_lim);
  cfg.P_b_max = v1(u_b_lim);
  cfg.x_min = v1(0.0);
  cfg.x_max = v1(12.0);
  cfg.x_b_min = v1(x_b_min);
  cfg.x_b_max = v1(x_b_max);
  cfg.C_s = v1(C_s);
  cfg.C_b1 = v1(C_b1);
  cfg.C_b2 = v1(C_b2);
  cfg.C_g1 = 0.5;
  cfg.C_g2 = 0.1;
  cfg.lambda_b = v1(1.0);
  cfg.Q = m1(0.03);
  cfg.R = m1(0.0012);
  cfg.P0 = m1(0.12);
  cfg.validate();
  return cfg;
}

inline TinyDraw random_tiny(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  TinyDraw d;
  const int N = 1 + static_cast<int>(u01(gen) * 2.0) % 2;
  const double u_s_max = 0.5 + u01(gen);
  const double u_b_lim = 1.5 + 1.5 * u01(gen);
  d.x0 = 4.0 + 4.0 * u01(gen);
  // Soft thresholds tight around the start half the time so the penalty
  // actually participates.
  const bool tight = u01(gen) < 0.5;
  const double x_b_min = tight ? d.x0 - 0.3 : 0.2;
  const double x_b_max = tight ? d.x0 + 0.3 : 11.8;
  d.cfg = tiny_config(N, u_s_max, u_b_lim, x_b_min, x_b_max, 0.5 + u01(gen),
                      0.1 + 0.4 * u01(gen), 0.1 + 0.4 * u01(gen));
  d.fc.pv_avail = mgd::Mat(N + 1, 1);
  d.fc.load = mgd::Mat(N + 1, 1);
  for (int n = 0; n <= N; ++n) {
    d.fc.pv_avail(n, 0) = 1.2 * u_s_max * u01(gen);
    d.fc.load(n, 0) = 1.4 * u01(gen);
  }
  d.mode = u01(gen) < 0.5 ? mgd::GridMode::islanded()
                          : mgd::GridMode::grid_fixed(0.6 * u01(gen) - 0.3);
  return d;
}

inline oracles::MpcInstance to_instance(const TinyDraw& d) {
  oracles::MpcInstance in;
  in.N = d.cfg.N;
  in.T_s = d.cfg.T_s;
  in.x0 = d.x0;
  in.x_min = d.cfg.x_min[0];
  in.x_max = d.cfg.x_max[0];
  in.x_b_min = d.cfg.x_b_min[0];
  in.x_b_max = d.cfg.x_b_max[0];
  in.u_s_max = d.cfg.P_s_max[0];
  in.u_b_min = d.cfg.P_b_min[0];
  in.u_b_max = d.cfg.P_b_max[0];
  in.C_s = d.cfg.C_s[0];
  in.C_b1 = d.cfg.C_b1[0];
  in.C_b2 = d.cfg.C_b2[0];
  in.C_g1 = d.cfg.C_g1;
  in.C_g2 = d.cfg.C_g2;
  for (int n = 0; n <= d.cfg.N; ++n) {
    in.avail.push_back(d.fc.pv_avail(n, 0));
    in.load.push_back(d.fc.load(n, 0));
  }
  in.p_g = d.mode.kind == mgd::GridMode::Kind::GridFixed ? d.mode.fixed_value : 0.0;
  return in;
}

}  // namespace mpc_cases
