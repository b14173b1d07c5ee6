#pragma once

#include "mgdispatch/controller.hpp"
#include "mgdispatch/scenario.hpp"
#include "mgdispatch/trace.hpp"

namespace mgd {

struct RunResult {
  TraceFile trace;
  VerifyReport report;
  int mpc_fallback_steps = 0;
  int sme_fallback_steps = 0;
};

// Trace metadata block shared by the in-process and networked executors.
std::map<std::string, std::string> trace_metadata(const Scenario& scenario);

// Mask telemetry the way the field devices would: PV availability is known
// only where the PV link is up, load metering only where the load is
// electrically connected.
Telemetry collect_telemetry(const ConnectionState& conn, const Vec& y,
                            const Vec& pv_avail_actual, const Vec& load_actual);

// One full in-process closed-loop run; bit-identical for identical inputs.
RunResult run(const Scenario& scenario);

}  // namespace mgd
