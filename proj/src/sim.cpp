#include "mgdispatch/sim.hpp"

#include <cstdio>

#include "mgdispatch/model.hpp"

namespace mgd {

std::map<std::string, std::string> trace_metadata(const Scenario& scenario) {
  char buf[64];
  std::map<std::string, std::string> m;
  m["schema"] = "1";
  m["name"] = scenario.name;
  m["seed"] = std::to_string(scenario.seed);
  switch (scenario.mode.kind) {
    case GridMode::Kind::Islanded:
      m["mode"] = "islanded";
      break;
    case GridMode::Kind::GridVariable:
      m["mode"] = "grid_variable";
      break;
    case GridMode::Kind::GridFixed:
      std::snprintf(buf, sizeof(buf), "grid_fixed:%.17g", scenario.mode.fixed_value);
      m["mode"] = buf;
      break;
  }
  m["compensation"] = scenario.compensation_enabled ? "true" : "false";
  std::snprintf(buf, sizeof(buf), "%.17g", scenario.duration_hours);
  m["duration_hours"] = buf;
  m["config"] = config_to_json_text(scenario.config);
  return m;
}

Telemetry collect_telemetry(const ConnectionState& conn, const Vec& y,
                            const Vec& pv_avail_actual, const Vec& load_actual) {
  Telemetry t;
  t.conn = conn;
  t.y = y;
  t.pv_avail_actual = Vec::Zero(pv_avail_actual.size());
  for (int i = 0; i < pv_avail_actual.size(); ++i)
    if (conn.A_s[i] == 1) t.pv_avail_actual[i] = pv_avail_actual[i];
  t.load_actual = Vec::Zero(load_actual.size());
  for (int i = 0; i < load_actual.size(); ++i)
    if (conn.G_l[i] == 1) t.load_actual[i] = load_actual[i];
  return t;
}

RunResult run(const Scenario& scenario) {
  scenario.validate();
  const SystemConfig& cfg = scenario.config;
  const int K = scenario.num_steps();

  DispatchController ctrl(cfg, scenario.mode, scenario.compensation_enabled,
                          scenario.x_hat0, scenario.profiles, scenario.pv_scale,
                          scenario.load_scale);
  ctrl.plan_initial();

  const ConnectionState base = ConnectionState::all_connected(cfg.n_b, cfg.n_s, cfg.n_l);
  const NoiseBounds bounds{cfg.Q, cfg.R};
  Rng rng(scenario.seed);
  Vec x = scenario.x0;

  RunResult result;
  result.trace.metadata = trace_metadata(scenario);
  result.trace.records.reserve(K);

  for (int k = 0; k < K; ++k) {
    const double t_h = k * cfg.T_s;
    const ConnectionState conn = apply_faults(scenario.faults, t_h, base);
    const auto [omega, upsilon] = sample_disturbance(scenario.disturbance, bounds, rng);

    const Vec pv_avail = scenario.profiles.pv_actual[k] * scenario.pv_scale;
    const Vec load = scenario.profiles.load_actual[k] * scenario.load_scale;
    const Vec y = measure(x, upsilon, conn.A_b);
    const Telemetry telemetry = collect_telemetry(conn, y, pv_avail, load);

    const Dispatch d = ctrl.decide_setpoints(k, telemetry);

    PlantSnapshot snap;
    snap.x = x;
    snap.y = y;
    snap.P_b = battery_power(d.u_star_b, conn.G_b);
    snap.P_s = pv_power(d.u_hat_s, pv_avail, conn.G_s);
    snap.P_l = Vec::Zero(cfg.n_l);
    for (int i = 0; i < cfg.n_l; ++i)
      if (conn.G_l[i] == 1) snap.P_l[i] = load[i];

    x = step_dynamics(x, snap.P_b, omega, cfg.T_s);

    const EstimateUpdate e = ctrl.update_between_samples(k, telemetry);
    TraceRecord rec = make_trace_record(k, cfg.T_s, conn, snap, d, e, scenario.mode);
    if (rec.flags & kFlagMpcFallback) ++result.mpc_fallback_steps;
    if (rec.flags & kFlagSmeFallback) ++result.sme_fallback_steps;
    result.trace.records.push_back(std::move(rec));
  }

  result.report = verify_trace(result.trace);
  return result;
}

}  // namespace mgd
