#pragma once

#include <map>
#include <string>
#include <vector>

#include "mgdispatch/types.hpp"

namespace mgd {

enum TraceFlag : unsigned {
  kFlagMpcFallback = 1u,           // MPC infeasible; previous plan shifted
  kFlagNoCompensator = 2u,         // no reachable battery, sigma forced to 0
  kFlagSigmaSaturated = 4u,        // |sigma| < |sigma_hat| after clamping
  kFlagSigmaEntryInfeasible = 8u,  // planned set-points already out of limits
  kFlagSoftStart = 16u,            // MPC relaxed hard SoC rows at this step
  kFlagSmeFallback = 32u,          // SME solve failed; prediction kept
};

// One fully-populated simulation step.
struct TraceRecord {
  int k = 0;
  double t_hours = 0.0;
  Vec x, x_hat, y;
  Mat P;
  Vec u_hat_s;   // PV set-points sent this step
  Vec u_b_star;  // compensated battery set-points sent this step
  Vec P_s, P_b, P_l;
  double P_g = 0.0;          // realized grid power (0 when islanded)
  double P_g_planned = 0.0;  // grid power the dispatch was balanced against
  double sigma = 0.0, sigma_hat = 0.0;
  double residual = 0.0;  // P_g_planned + sum(G_s P_s) + sum(G_b P_b) - sum(G_l P_l)
  ConnectionState conn;  // connection state in force during the step
  bool containment = false;
  double sme_cert_eig = 0.0;
  unsigned flags = 0;
};

struct TraceFile {
  std::map<std::string, std::string> metadata;
  std::vector<TraceRecord> records;

  // Convenience accessors over the metadata block.
  SystemConfig config() const;
  GridMode mode() const;
};

// CSV layout: '#'-prefixed metadata lines (key=value), one header row, then
// one row per step; all floats printed with 9 significant digits. Identical
// inputs produce byte-identical files.
void write_trace(const std::string& path, const TraceFile& trace);
std::string render_trace(const TraceFile& trace);
TraceFile read_trace(const std::string& path);
TraceFile parse_trace(const std::string& text);

struct VerifyReport {
  int rows = 0;
  double max_abs_residual = 0.0;
  int residual_mismatches = 0;     // logged residual disagrees with recompute
  int containment_violations = 0;  // recomputed: x outside the ellipsoid
  int containment_mismatches = 0;  // logged flag disagrees with recompute
  int limit_violations = 0;
  double max_limit_violation = 0.0;
  double max_cert_eig = 0.0;
  int cert_violations = 0;  // certificate eigenvalue above 1e-7
  double sigma_max_abs = 0.0;
  int sigma_nonzero_steps = 0;
  double grid_abs_dev_max = 0.0;  // |P_g - constant| in fixed-grid mode

  bool clean() const {
    return containment_violations == 0 && containment_mismatches == 0 &&
           residual_mismatches == 0 && limit_violations == 0 && cert_violations == 0;
  }
};

// Recomputes invariants from logged values alone.
VerifyReport verify_trace(const TraceFile& trace);
std::string format_report(const VerifyReport& r);

}  // namespace mgd
