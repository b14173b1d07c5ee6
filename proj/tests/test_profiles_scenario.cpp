#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>

#include "mgdispatch/scenario.hpp"

using namespace mgd;

namespace {

std::string temp_path(const char* stem) {
  return std::string(MGD_SOURCE_DIR) + "/build/" + stem;
}

Scenario scenario_from(const std::string& body) {
  return parse_scenario(body, MGD_SOURCE_DIR "/scenarios");
}

const char* kMinimal = R"({
  "schema_version": 1,
  "profiles": {"duration_hours": 27, "step_hours": 0.25, "forecast_band": 0.0, "seed": 1}
})";

std::string with_extra(const std::string& insert) {
  std::string s = kMinimal;
  s.insert(s.rfind('}'), insert);
  return s;
}

}  // namespace

TEST_CASE("generated day obeys its envelope") {
  ProfileGenOptions opts;
  opts.duration_hours = 24.0;
  opts.forecast_band = 0.1;
  opts.seed = 5;
  const ProfileData p = generate_profiles(opts);
  p.validate();
  REQUIRE(p.rows() == 97);
  CHECK(p.step_hours() == doctest::Approx(0.25));
  CHECK(p.t_hours[0] == 0.0);
  CHECK(p.t_hours[96] == doctest::Approx(24.0));

  CHECK(p.pv_forecast[0] == p.pv_actual[0]);
  CHECK(p.load_forecast[0] == p.load_actual[0]);
  for (int i = 0; i < p.rows(); ++i) {
    const double t = p.t_hours[i];
    if (t <= 6.0 || t >= 18.0) CHECK(p.pv_actual[i] == 0.0);
    CHECK(p.pv_actual[i] <= 1.5 + 1e-12);
    CHECK(std::abs(p.pv_forecast[i] - p.pv_actual[i]) <= 0.1 * p.pv_actual[i] + 1e-12);
    CHECK(std::abs(p.load_forecast[i] - p.load_actual[i]) <= 0.1 * p.load_actual[i] + 1e-12);
    CHECK(p.load_actual[i] > 0.0);
  }

  ProfileGenOptions exact = opts;
  exact.forecast_band = 0.0;
  const ProfileData q = generate_profiles(exact);
  CHECK((q.pv_forecast - q.pv_actual).cwiseAbs().maxCoeff() == 0.0);
  CHECK((q.load_forecast - q.load_actual).cwiseAbs().maxCoeff() == 0.0);

  CHECK(p.index_of(6.25) == 25);
  CHECK_THROWS(p.index_of(6.1));
  CHECK_THROWS(p.index_of(25.0));
}

TEST_CASE("profile CSV round-trips through disk") {
  ProfileGenOptions opts;
  opts.duration_hours = 6.0;
  opts.forecast_band = 0.08;
  opts.seed = 9;
  const ProfileData p = generate_profiles(opts);
  const std::string path = temp_path("roundtrip_profiles.csv");
  write_profile_csv(path, p);
  const ProfileData q = load_profile_csv(path);
  REQUIRE(q.rows() == p.rows());
  CHECK((q.t_hours - p.t_hours).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK((q.pv_actual - p.pv_actual).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK((q.pv_forecast - p.pv_forecast).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK((q.load_actual - p.load_actual).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK((q.load_forecast - p.load_forecast).cwiseAbs().maxCoeff() <= 1e-7);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_profile_csv(temp_path("no_such_profiles.csv")), IoError);
}

TEST_CASE("stock three-unit parameters") {
  const SystemConfig cfg = default_system_config();
  cfg.validate();
  CHECK(cfg.n_b == 3);
  CHECK(cfg.n_s == 3);
  CHECK(cfg.n_l == 3);
  CHECK(cfg.T_s == 0.25);
  CHECK(cfg.N == 12);
  CHECK(cfg.P_s_max[0] == 1.5);
  CHECK(cfg.P_s_max[2] == 4.5);
  CHECK(cfg.P_s_min.cwiseAbs().maxCoeff() == 0.0);
  CHECK(cfg.P_b_min[1] == -4.0);
  CHECK(cfg.P_b_max[1] == 4.0);
  CHECK(cfg.x_max[0] == 12.0);
  CHECK(cfg.x_max[2] == 24.0);
  CHECK(cfg.x_min.cwiseAbs().maxCoeff() == 0.0);
  CHECK(cfg.x_b_min[0] == 0.2);
  CHECK(cfg.x_b_max[1] == 15.7);
  CHECK(cfg.x_b_max[2] == 23.7);
  CHECK(cfg.C_s[1] == 1.0);
  CHECK(cfg.C_b1[1] == 0.15);
  CHECK(cfg.C_b2[2] == 0.3);
  CHECK(cfg.C_g1 == 0.5);
  CHECK(cfg.C_g2 == 0.1);
  CHECK(cfg.lambda_b.minCoeff() == 1.0);
  CHECK((cfg.Q - 0.03 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cfg.R - 0.0012 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cfg.P0 - 0.12 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);

  Scenario s = default_scenario();
  CHECK(s.pv_scale[0] == 0.5);
  CHECK(s.load_scale[2] == 1.2);
  CHECK(s.x0[2] == 6.0);
  CHECK(s.x_hat0[2] == 5.8);
  ProfileGenOptions opts;
  opts.duration_hours = 27.0;
  s.profiles = generate_profiles(opts);
  s.validate();
  CHECK(s.num_steps() == 96);

  s.duration_hours = 24.1;  // not a multiple of a quarter hour
  CHECK_THROWS(s.num_steps());
}

TEST_CASE("config echo text reproduces every entry") {
  const SystemConfig cfg = default_system_config();
  const SystemConfig back = config_from_json_text(config_to_json_text(cfg));
  CHECK(back.n_b == cfg.n_b);
  CHECK((back.P_b_max - cfg.P_b_max).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.x_b_max - cfg.x_b_max).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.C_b1 - cfg.C_b1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.Q - cfg.Q).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.C_g2 == cfg.C_g2);
  CHECK(back.N == cfg.N);
}

TEST_CASE("strict parsing rejects malformed scenarios") {
  CHECK_NOTHROW(scenario_from(kMinimal));

  CHECK_THROWS_AS(scenario_from("{\"schema_version\": 1}"), ConfigError);
  CHECK_THROWS_AS(scenario_from("[1,2]"), ConfigError);
  CHECK_THROWS_AS(scenario_from("{\"schema_version"), ConfigError);

  std::string bad = kMinimal;
  bad.replace(bad.find(": 1"), 3, ": 2");
  CHECK_THROWS_AS(scenario_from(bad), ConfigError);

  CHECK_THROWS_AS(scenario_from(with_extra(", \"surprise\": 3")), ConfigError);
  CHECK_THROWS_AS(scenario_from(with_extra(", \"compensation_enabled\": \"yes\"")),
                  ConfigError);
  CHECK_THROWS_AS(scenario_from(with_extra(", \"mode\": \"grid_sometimes\"")), ConfigError);
  CHECK_THROWS_AS(scenario_from(with_extra(", \"mode\": {\"fixed\": 1}")), ConfigError);
  CHECK_THROWS_AS(
      scenario_from(with_extra(", \"disturbance\": {\"kind\": \"gaussian\"}")),
      ConfigError);
  CHECK_THROWS_AS(
      scenario_from(with_extra(
          ", \"faults\": [{\"kind\": \"battery\", \"index\": 0, \"start_hours\": 1, "
          "\"end_hours\": 2, \"color\": \"red\"}]")),
      ConfigError);
  CHECK_NOTHROW(scenario_from(with_extra(
      ", \"faults\": [{\"kind\": \"battery\", \"index\": 0, \"start_hours\": 1, "
      "\"end_hours\": 2}]")));

  // Semantic rejections fire during ingestion too.
  CHECK_THROWS(scenario_from(with_extra(
      ", \"faults\": [{\"kind\": \"battery\", \"index\": 3, \"start_hours\": 1, "
      "\"end_hours\": 2}]")));
  CHECK_THROWS(scenario_from(with_extra(
      ", \"faults\": [{\"kind\": \"load\", \"index\": 0, \"layer\": \"communication\", "
      "\"start_hours\": 1, \"end_hours\": 2}]")));
  CHECK_NOTHROW(scenario_from(with_extra(
      ", \"faults\": [{\"kind\": \"load\", \"index\": 0, \"layer\": \"electrical\", "
      "\"start_hours\": 1, \"end_hours\": 2}]")));

  CHECK_THROWS(scenario_from(with_extra(", \"x0\": [3.0, 4.0, 20.0]")));
}

TEST_CASE("bundled scenario files load and validate") {
  for (const char* stem : {"case1", "case2", "case3", "case4"}) {
    const Scenario s =
        load_scenario(std::string(MGD_SOURCE_DIR) + "/scenarios/" + stem + ".json");
    CHECK_NOTHROW(s.validate());
    CHECK(s.num_steps() == 96);
  }
  const Scenario c3 = load_scenario(MGD_SOURCE_DIR "/scenarios/case3.json");
  CHECK(c3.mode.kind == GridMode::Kind::GridFixed);
  CHECK(c3.mode.fixed_value == -0.0979);
}

TEST_CASE("faults switch connection bits over half-open windows") {
  std::vector<FaultEvent> faults;
  FaultEvent f;
  f.kind = FaultEvent::Kind::Battery;
  f.index = 1;
  f.layer = FaultEvent::Layer::Communication;
  f.start_hours = 11.0;
  f.end_hours = 13.0;
  faults.push_back(f);
  FaultEvent g;
  g.kind = FaultEvent::Kind::Battery;
  g.index = 1;
  g.layer = FaultEvent::Layer::Electrical;
  g.start_hours = 12.0;
  g.end_hours = 14.0;
  faults.push_back(g);
  FaultEvent h;
  h.kind = FaultEvent::Kind::Pv;
  h.index = 0;
  h.layer = FaultEvent::Layer::Both;
  h.start_hours = 12.0;
  h.end_hours = 12.5;
  faults.push_back(h);

  const ConnectionState base = ConnectionState::all_connected(3, 3, 3);
  auto at = [&](double t) { return apply_faults(faults, t, base); };

  CHECK(at(10.99).A_b[1] == 1);
  CHECK(at(11.0).A_b[1] == 0);   // half-open: start included
  CHECK(at(12.99).A_b[1] == 0);
  CHECK(at(13.0).A_b[1] == 1);   // end excluded
  CHECK(at(11.5).G_b[1] == 1);   // electrical layer untouched until 12h
  CHECK(at(12.0).G_b[1] == 0);
  CHECK(at(12.5).A_b[1] == 0);   // overlap: both faults active
  CHECK(at(12.5).G_b[1] == 0);
  CHECK(at(13.5).G_b[1] == 0);
  CHECK(at(13.5).A_b[1] == 1);
  CHECK(at(12.25).A_s[0] == 0);  // layer "both" hits both bits
  CHECK(at(12.25).G_s[0] == 0);
  CHECK(at(12.5).A_s[0] == 1);
  CHECK(at(10.0).A_s[0] == 1);

  // Untouched units never change.
  for (double t : {10.0, 11.5, 12.25, 13.5}) {
    CHECK(at(t).A_b[0] == 1);
    CHECK(at(t).G_b[2] == 1);
    CHECK(at(t).G_l[0] == 1);
  }
}

TEST_CASE("disturbance samples stay inside their sets") {
  NoiseBounds nb;
  nb.Q = 0.03 * Mat::Identity(3, 3);
  nb.R = 0.0012 * Mat::Identity(3, 3);
  Rng rng(17);

  DisturbanceModel box;
  box.kind = DisturbanceModel::Kind::UniformBox;
  for (int i = 0; i < 200; ++i) {
    const auto [w, v] = sample_disturbance(box, nb, rng);
    CHECK(w.cwiseAbs().maxCoeff() <= 0.1);
    CHECK(v.cwiseAbs().maxCoeff() <= 0.02);
  }

  DisturbanceModel boundary;
  boundary.kind = DisturbanceModel::Kind::Boundary;
  for (int i = 0; i < 50; ++i) {
    const auto [w, v] = sample_disturbance(boundary, nb, rng);
    CHECK(w.dot(nb.Q.inverse() * w) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(v.dot(nb.R.inverse() * v) == doctest::Approx(1.0).epsilon(1e-9));
  }

  DisturbanceModel none;
  none.kind = DisturbanceModel::Kind::None;
  const auto [w, v] = sample_disturbance(none, nb, rng);
  CHECK(w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(v.cwiseAbs().maxCoeff() == 0.0);

  // Identical seeds replay the identical stream.
  Rng a(99), b(99);
  for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
}
