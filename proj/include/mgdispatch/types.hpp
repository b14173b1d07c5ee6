#pragma once

#include <optional>
#include <string>

#include "mgdispatch/linalg.hpp"

namespace mgd {

// Static parameters of the multi-microgrid system: unit counts, sampling,
// horizon, power and state-of-charge limits, cost weights, participation
// factors, and the bounding-set shapes for process/measurement noise.
struct SystemConfig {
  int n_b = 0;  // batteries
  int n_s = 0;  // PV units
  int n_l = 0;  // loads

  double T_s = 0.25;  // sampling interval, hours
  int N = 12;         // prediction horizon, steps

  Vec P_s_min, P_s_max;  // PV power limits, pu
  Vec P_b_min, P_b_max;  // battery power limits, pu
  Vec x_min, x_max;      // hard SoC limits, puh
  Vec x_b_min, x_b_max;  // soft SoC thresholds, puh

  Vec C_s;            // PV utilization reward weights
  Vec C_b1;           // battery throughput weights, 1/pu^2
  Vec C_b2;           // soft SoC violation weights, 1/puh^2
  double C_g1 = 0.5;  // grid quadratic weight, 1/pu^2
  double C_g2 = 0.1;  // grid linear weight, 1/pu

  Vec lambda_b;  // compensation participation factors

  Mat Q;   // process-noise ellipsoid shape (n_b x n_b, SPD)
  Mat R;   // measurement-noise ellipsoid shape (n_b x n_b, SPD)
  Mat P0;  // initial estimate ellipsoid shape (n_b x n_b, SPD)

  void validate() const;  // throws ConfigError on violated invariants
};

// Three-battery benchmark parameter set used by the bundled scenarios.
SystemConfig default_system_config();

// Per-layer connection status, one entry per unit, values in {0, 1}.
// A_* is the communication layer, G_* the electrical layer. Loads carry
// no communication layer of their own.
struct ConnectionState {
  VecI A_b, G_b;
  VecI A_s, G_s;
  VecI G_l;

  static ConnectionState all_connected(int n_b, int n_s, int n_l);
  void validate(int n_b, int n_s, int n_l) const;
};

struct GridMode {
  enum class Kind { Islanded, GridVariable, GridFixed };
  Kind kind = Kind::Islanded;
  double fixed_value = 0.0;  // pu, meaningful only for GridFixed

  static GridMode islanded() { return {Kind::Islanded, 0.0}; }
  static GridMode grid_variable() { return {Kind::GridVariable, 0.0}; }
  static GridMode grid_fixed(double value) { return {Kind::GridFixed, value}; }

  bool operator==(const GridMode&) const = default;
};

std::string to_string(const GridMode& mode);

// A default set-point sequence for one unit. Entry n applies to step
// origin_step + n; length is horizon + 1.
struct ControlPlan {
  Vec setpoints;
  int origin_step = 0;
};

// One-step LTI matrices of the transformed estimator model
//   x(k+1) = x(k) + B u(k) + F w(k) + delta,   y(k) = C (x(k) + v(k)).
// B and delta are assembled from the connection state in effect over the
// step, C and D from the state at the measurement instant.
struct LtiMatrices {
  Mat B, C, D, F;
  Vec delta;
};

struct PlantState {
  Vec x;     // true SoC, puh
  int k = 0;
};

}  // namespace mgd
