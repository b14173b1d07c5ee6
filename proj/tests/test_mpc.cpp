#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mgdispatch/controller.hpp"
#include "mgdispatch/mpc.hpp"
#include "support/mpc_cases.hpp"
#include "support/oracles.hpp"

using namespace mgd;
using mpc_cases::random_tiny;
using mpc_cases::tiny_config;
using mpc_cases::to_instance;
using mpc_cases::TinyDraw;
using mpc_cases::v1;

namespace {

constexpr double kOracleTol = 1e-2;     // vs. grid enumeration at 1e-2 resolution
constexpr double kTightnessTol = 1e-6;  // objective vs. recomputed stage cost
constexpr double kLimitTol = 1e-6;      // constraint satisfaction

}  // namespace

TEST_CASE("solutions match exhaustive grid enumeration") {
  std::mt19937_64 gen(53);
  int compared = 0;
  for (int trial = 0; trial < 60 && compared < 50; ++trial) {
    const TinyDraw d = random_tiny(gen);
    const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
    const MpcProblem problem = build_problem(v1(d.x0), d.fc, conn, d.cfg, d.mode);
    const MpcSolution sol = solve(problem);
    const oracles::MpcOptimum ref = oracles::mpc_grid_enumeration(to_instance(d), 1e-2);
    if (!sol.feasible || !ref.feasible) {
      CHECK(sol.feasible == ref.feasible);
      continue;
    }
    CAPTURE(trial);
    CHECK(sol.objective <= ref.cost + 1e-6);       // continuous beats the grid
    CHECK(ref.cost - sol.objective <= kOracleTol);  // and not by more than its pitch
    CHECK(std::abs(evaluate_cost(sol, d.cfg) - sol.objective) <= kTightnessTol);
    CHECK(max_limit_violation(sol, problem) <= kLimitTol);
    ++compared;
  }
  CHECK(compared >= 50);
}

TEST_CASE("an electrically dead battery is equivalent to removing it") {
  SystemConfig one = tiny_config(2, 1.0, 3.0, 0.2, 11.8, 1.0, 0.2, 0.3);

  SystemConfig two = one;
  two.n_b = 2;
  auto dup = [](const Vec& v) { return (Vec(2) << v[0], v[0]).finished(); };
  two.P_b_min = dup(one.P_b_min);
  two.P_b_max = dup(one.P_b_max);
  two.x_min = dup(one.x_min);
  two.x_max = dup(one.x_max);
  two.x_b_min = dup(one.x_b_min);
  two.x_b_max = dup(one.x_b_max);
  two.C_b1 = dup(one.C_b1);
  two.C_b2 = dup(one.C_b2);
  two.lambda_b = dup(one.lambda_b);
  two.Q = 0.03 * Mat::Identity(2, 2);
  two.R = 0.0012 * Mat::Identity(2, 2);
  two.P0 = 0.12 * Mat::Identity(2, 2);
  two.validate();

  Forecasts fc;
  fc.pv_avail = (Mat(3, 1) << 0.8, 0.9, 0.7).finished();
  fc.load = (Mat(3, 1) << 1.1, 1.0, 1.2).finished();

  ConnectionState conn2 = ConnectionState::all_connected(2, 1, 1);
  conn2.G_b[1] = 0;
  conn2.A_b[1] = 0;
  const MpcProblem p2 =
      build_problem((Vec(2) << 5.0, 6.0).finished(), fc, conn2, two, GridMode::islanded());
  const MpcSolution s2 = solve(p2);
  REQUIRE(s2.feasible);
  CHECK(s2.controllable_b[0] == 1);
  CHECK(s2.controllable_b[1] == 0);
  CHECK(s2.P_b.col(1).cwiseAbs().maxCoeff() == 0.0);

  const ConnectionState conn1 = ConnectionState::all_connected(1, 1, 1);
  const MpcProblem p1 = build_problem(v1(5.0), fc, conn1, one, GridMode::islanded());
  const MpcSolution s1 = solve(p1);
  REQUIRE(s1.feasible);

  CHECK(std::abs(s1.objective - s2.objective) <= 1e-5);
  CHECK((s1.u_b.col(0) - s2.u_b.col(0)).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("extra PV availability never increases the optimum") {
  std::mt19937_64 gen(59);
  for (int trial = 0; trial < 20; ++trial) {
    const TinyDraw d = random_tiny(gen);
    const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
    const MpcSolution base = solve(build_problem(v1(d.x0), d.fc, conn, d.cfg, d.mode));
    Forecasts more = d.fc;
    more.pv_avail.array() += 0.2;
    const MpcSolution better = solve(build_problem(v1(d.x0), more, conn, d.cfg, d.mode));
    if (!base.feasible) continue;
    REQUIRE(better.feasible);
    CHECK(better.objective <= base.objective + 1e-7);
  }
}

TEST_CASE("start outside the hard window relaxes and recovers") {
  SystemConfig cfg = tiny_config(2, 1.0, 3.0, 0.2, 11.8, 1.0, 0.2, 0.3);
  Forecasts fc;
  fc.pv_avail = (Mat(3, 1) << 0.5, 0.5, 0.5).finished();
  fc.load = (Mat(3, 1) << 0.6, 0.6, 0.6).finished();
  const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
  const MpcProblem p =
      build_problem(v1(12.4), fc, conn, cfg, GridMode::islanded());  // above x_max
  CHECK(p.soft_start);
  const MpcSolution sol = solve(p);
  REQUIRE(sol.feasible);
  CHECK(sol.soft_start_used);
}

TEST_CASE("impossible balance is classified as such") {
  SystemConfig cfg = tiny_config(1, 1.0, 2.0, 0.2, 11.8, 1.0, 0.2, 0.3);
  Forecasts fc;
  fc.pv_avail = (Mat(2, 1) << 0.5, 0.5).finished();
  fc.load = (Mat(2, 1) << 9.0, 9.0).finished();  // beyond battery + PV capability
  const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
  const MpcSolution sol = solve(build_problem(v1(6.0), fc, conn, cfg, GridMode::islanded()));
  CHECK(!sol.feasible);
  CHECK(sol.infeasibility_class == "power balance");
}

TEST_CASE("an exhausted battery is classified as a state limit") {
  SystemConfig cfg = tiny_config(2, 0.1, 3.0, 0.2, 11.8, 1.0, 0.2, 0.3);
  Forecasts fc;
  fc.pv_avail = (Mat(3, 1) << 0.0, 0.0, 0.0).finished();
  fc.load = (Mat(3, 1) << 2.0, 2.0, 2.0).finished();  // discharge 0.5 puh/step
  const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
  const MpcSolution sol =
      solve(build_problem(v1(0.4), fc, conn, cfg, GridMode::islanded()));
  CHECK(!sol.feasible);
  CHECK(sol.infeasibility_class == "state-of-charge limits");
}

TEST_CASE("fixed grid mode pins the grid series") {
  SystemConfig cfg = tiny_config(2, 1.0, 3.0, 0.2, 11.8, 1.0, 0.2, 0.3);
  Forecasts fc;
  fc.pv_avail = (Mat(3, 1) << 0.6, 0.7, 0.8).finished();
  fc.load = (Mat(3, 1) << 1.0, 1.1, 0.9).finished();
  const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
  const GridMode mode = GridMode::grid_fixed(-0.0979);
  const MpcSolution sol = solve(build_problem(v1(6.0), fc, conn, cfg, mode));
  REQUIRE(sol.feasible);
  for (int n = 0; n <= 2; ++n) CHECK(sol.P_g[n] == -0.0979);
}

TEST_CASE("extracted plans carry the origin and full horizon") {
  SystemConfig cfg = tiny_config(2, 1.0, 3.0, 0.2, 11.8, 1.0, 0.2, 0.3);
  Forecasts fc;
  fc.pv_avail = (Mat(3, 1) << 0.6, 0.7, 0.8).finished();
  fc.load = (Mat(3, 1) << 1.0, 1.1, 0.9).finished();
  const ConnectionState conn = ConnectionState::all_connected(1, 1, 1);
  const MpcSolution sol =
      solve(build_problem(v1(6.0), fc, conn, cfg, GridMode::islanded()));
  REQUIRE(sol.feasible);
  const auto [plans_s, plans_b] = extract_plan(sol, 7);
  REQUIRE(plans_s.size() == 1);
  REQUIRE(plans_b.size() == 1);
  CHECK(plans_s[0].setpoints.size() == 3);
  CHECK(plans_b[0].origin_step == 7);
  CHECK(plans_b[0].setpoints[0] == doctest::Approx(sol.u_b(0, 0)));
}

TEST_CASE("forecast_window scales the profile rows") {
  ProfileGenOptions opts;
  opts.duration_hours = 3.0;
  opts.forecast_band = 0.2;
  opts.seed = 3;
  const ProfileData data = generate_profiles(opts);
  const Vec pv_scale = (Vec(2) << 0.5, 1.5).finished();
  const Vec load_scale = v1(2.0);
  const Forecasts fc = forecast_window(data, pv_scale, load_scale, 2, 4);
  REQUIRE(fc.pv_avail.rows() == 5);
  REQUIRE(fc.pv_avail.cols() == 2);
  for (int n = 0; n <= 4; ++n) {
    CHECK(fc.pv_avail(n, 0) == 0.5 * data.pv_forecast[2 + n]);
    CHECK(fc.pv_avail(n, 1) == 1.5 * data.pv_forecast[2 + n]);
    CHECK(fc.load(n, 0) == 2.0 * data.load_forecast[2 + n]);
  }
}
