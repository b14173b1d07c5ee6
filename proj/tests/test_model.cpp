#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mgdispatch/model.hpp"

using namespace mgd;

namespace {

Vec vec3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }
VecI mask3(int a, int b, int c) { return (VecI(3) << a, b, c).finished(); }

}  // namespace

TEST_CASE("battery_setpoint selects commanded or default per link") {
  const Vec u = vec3(4, 5, 6), d = vec3(1, 2, 3);
  CHECK(battery_setpoint(u, d, mask3(1, 0, 1)) == vec3(4, 2, 6));
  CHECK(battery_setpoint(u, d, mask3(1, 1, 1)) == u);
  CHECK(battery_setpoint(u, d, mask3(0, 0, 0)) == d);
}

TEST_CASE("battery_setpoint matches mask semantics on every 3-bit mask") {
  const Vec u = vec3(-1.5, 0.25, 7), d = vec3(2, -3, 0.5);
  for (int m = 0; m < 8; ++m) {
    const VecI A = mask3(m & 1, (m >> 1) & 1, (m >> 2) & 1);
    const Vec out = battery_setpoint(u, d, A);
    for (int i = 0; i < 3; ++i) CHECK(out[i] == (A[i] ? u[i] : d[i]));
  }
}

TEST_CASE("battery_power masks electrically") {
  CHECK(battery_power(vec3(4, 2, 6), mask3(1, 0, 1)) == vec3(4, 0, 6));
  CHECK(battery_power(vec3(4, 2, 6), mask3(1, 1, 1)) == vec3(4, 2, 6));
  CHECK(battery_power(vec3(0, 0, 0), mask3(0, 1, 0)) == vec3(0, 0, 0));
}

TEST_CASE("pv_power curtails at availability and masks faults") {
  const VecI on = (VecI(1) << 1).finished(), off = (VecI(1) << 0).finished();
  const Vec avail = (Vec(1) << 1.5).finished();
  CHECK(pv_power((Vec(1) << 2.0).finished(), avail, on)[0] == 1.5);
  CHECK(pv_power((Vec(1) << 1.0).finished(), avail, off)[0] == 0.0);
  CHECK(pv_power((Vec(1) << 1.0).finished(), avail, on)[0] == 1.0);
}

TEST_CASE("pv_power never exceeds availability or set-point") {
  const Vec avail = vec3(0.3, 1.2, 0.0);
  const Vec u = vec3(1.0, 0.4, 0.7);
  const Vec p = pv_power(u, avail, mask3(1, 1, 1));
  for (int i = 0; i < 3; ++i) {
    CHECK(p[i] <= avail[i]);
    CHECK(p[i] <= u[i]);
  }
  CHECK(pv_power(u, avail, mask3(0, 0, 0)) == vec3(0, 0, 0));
}

TEST_CASE("step_dynamics integrates power and disturbance") {
  const Vec one = (Vec(1) << 3.0).finished();
  CHECK(step_dynamics(one, (Vec(1) << 1.0).finished(), Vec::Zero(1), 0.25)[0] == 2.75);
  CHECK(step_dynamics(one, Vec::Zero(1), Vec::Zero(1), 0.25)[0] == 3.0);
  CHECK(step_dynamics(one, Vec::Zero(1), (Vec(1) << 0.1).finished(), 0.25)[0] ==
        doctest::Approx(2.975).epsilon(1e-12));
}

TEST_CASE("step_dynamics equals its affine expansion") {
  const Vec x = vec3(3, 4, 6), P = vec3(0.5, -1, 2), w = vec3(0.05, -0.02, 0.1);
  const Vec out = step_dynamics(x, P, w, 0.25);
  for (int i = 0; i < 3; ++i)
    CHECK(out[i] == doctest::Approx(x[i] - 0.25 * P[i] - 0.25 * w[i]).epsilon(1e-12));
}

TEST_CASE("measure masks noisy channels") {
  const Vec x = (Vec(2) << 3, 4).finished();
  const Vec v = (Vec(2) << 0.01, -0.02).finished();
  const VecI A = (VecI(2) << 1, 0).finished();
  const Vec y = measure(x, v, A);
  CHECK(y[0] == doctest::Approx(3.01).epsilon(1e-15));
  CHECK(y[1] == 0.0);
  CHECK(measure(x, Vec::Zero(2), (VecI(2) << 1, 1).finished()) == x);
  CHECK(measure(x, v, (VecI(2) << 0, 0).finished()) == Vec::Zero(2));
}

TEST_CASE("assemble_lti substitutes the connection snapshot") {
  SystemConfig cfg = default_system_config();
  ConnectionState conn = ConnectionState::all_connected(3, 3, 3);
  conn.A_b = mask3(1, 0, 1);
  const LtiMatrices m = assemble_lti(cfg, conn, vec3(1, 2, 3));

  CHECK(m.delta == vec3(0, -0.5, 0));
  CHECK(m.B == Mat((Vec(3) << -0.25, 0, -0.25).finished().asDiagonal()));
  CHECK(m.C == Mat(vec3(1, 0, 1).asDiagonal()));
  CHECK(m.D == Mat(vec3(1, 0, 1).asDiagonal()));
  CHECK(m.F == Mat(-0.25 * Mat::Identity(3, 3)));
}

TEST_CASE("assemble_lti with full communication has zero offset") {
  SystemConfig cfg = default_system_config();
  ConnectionState conn = ConnectionState::all_connected(3, 3, 3);
  const LtiMatrices m = assemble_lti(cfg, conn, vec3(9, 9, 9));
  CHECK(m.delta == Vec::Zero(3));
  CHECK(m.B == Mat(-0.25 * Mat::Identity(3, 3)));
}

TEST_CASE("assemble_lti zeroes rows of electrically dead units") {
  SystemConfig cfg = default_system_config();
  ConnectionState conn = ConnectionState::all_connected(3, 3, 3);
  conn.G_b[0] = 0;
  conn.A_b[0] = 0;
  const LtiMatrices m = assemble_lti(cfg, conn, vec3(1, 2, 3));
  CHECK(m.B.row(0) == Mat::Zero(1, 3));
  CHECK(m.delta[0] == 0.0);
}

TEST_CASE("update_default_plan shifts on silence and replaces on delivery") {
  ControlPlan plan{vec3(1, 2, 3), 4};  // entries a,b,c with N = 2

  const ControlPlan shifted = update_default_plan(plan, std::nullopt, 5);
  CHECK(shifted.setpoints == vec3(2, 3, 3));
  CHECK(shifted.origin_step == 5);

  const ControlPlan replaced = update_default_plan(plan, vec3(7, 8, 9), 5);
  CHECK(replaced.setpoints == vec3(7, 8, 9));
  CHECK(replaced.origin_step == 5);

  const ControlPlan stale = update_default_plan(plan, std::nullopt, 9);  // t = 5 > N
  CHECK(stale.setpoints == vec3(3, 3, 3));
}

TEST_CASE("plan shifts compose") {
  ControlPlan plan{(Vec(5) << 1, 2, 3, 4, 5).finished(), 10};
  for (int t = 1; t <= 6; ++t) {
    ControlPlan once = update_default_plan(plan, std::nullopt, 10 + t);
    ControlPlan twice = plan;
    for (int s = 1; s <= t; ++s) twice = update_default_plan(twice, std::nullopt, 10 + s);
    CHECK(once.setpoints == twice.setpoints);
    CHECK(once.origin_step == twice.origin_step);
  }
}

TEST_CASE("plan_value_at reads the shifted entry") {
  const ControlPlan plan{vec3(1, 2, 3), 4};
  CHECK(plan_value_at(plan, 4) == 1.0);
  CHECK(plan_value_at(plan, 6) == 3.0);
  CHECK(plan_value_at(plan, 60) == 3.0);
}

TEST_CASE("power_balance_residual sums connected injections") {
  ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
  const Vec ps = (Vec(1) << 1.0).finished(), pb = (Vec(1) << -0.5).finished(),
            pl = (Vec(1) << 0.5).finished();
  CHECK(power_balance_residual(ps, pb, 0.0, pl, conn) == doctest::Approx(0.0));
  CHECK(power_balance_residual(Vec::Zero(1), Vec::Zero(1), 0.0, Vec::Zero(1), conn) == 0.0);
  CHECK(power_balance_residual((Vec(1) << 2.0).finished(), Vec::Zero(1), 0.0,
                               (Vec(1) << 1.0).finished(), conn) == doctest::Approx(1.0));
}

TEST_CASE("dimension mismatches are rejected") {
  CHECK_THROWS_AS(battery_power(Vec::Zero(2), mask3(1, 1, 1)), DimensionError);
  CHECK_THROWS_AS(measure(Vec::Zero(3), Vec::Zero(2), mask3(1, 1, 1)), DimensionError);
  CHECK_THROWS_AS(step_dynamics(Vec::Zero(3), Vec::Zero(3), Vec::Zero(2), 0.25),
                  DimensionError);
}
