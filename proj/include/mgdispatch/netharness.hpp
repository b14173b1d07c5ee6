#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mgdispatch/sim.hpp"

namespace mgd {

struct HarnessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Data-frame bookkeeping of one unit link (MEASUREMENT, AVAILABILITY and
// SETPOINT_PLAN frames; TICK markers and hub summaries are clock
// infrastructure and travel outside the drop policy).
struct LinkCounter {
  long sent = 0;
  long delivered = 0;
  long dropped = 0;
};

struct NetStats {
  std::vector<LinkCounter> battery_links, pv_links, load_links;
  // Set-points actually actuated by the unit agents, one row per tick.
  Mat applied_b, applied_s;
};

// Runs the scenario on the message-passing topology: one controller agent,
// one hub relay per microgrid, one agent per unit, all exchanging frames
// over loopback TCP, advanced by a TICK logical clock. Produces the same
// trace as run() on the same scenario.
RunResult run_networked(const Scenario& scenario, NetStats* stats = nullptr);

}  // namespace mgd
