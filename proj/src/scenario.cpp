#include "mgdispatch/scenario.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

namespace mgd {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(ctx + ": unknown key '" + item.key() + "'");
  }
}

double get_number(const json& j, const std::string& ctx) {
  if (!j.is_number()) throw ConfigError(ctx + ": expected a number");
  return j.get<double>();
}

// Scalar entries broadcast; arrays must match the expected length.
Vec parse_vec(const json& j, int n, const std::string& ctx) {
  if (j.is_number()) return Vec::Constant(n, j.get<double>());
  if (!j.is_array()) throw ConfigError(ctx + ": expected number or array");
  if (static_cast<int>(j.size()) != n)
    throw ConfigError(ctx + ": expected " + std::to_string(n) + " entries, got " +
                      std::to_string(j.size()));
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = get_number(j[i], ctx);
  return v;
}

int get_int(const json& j, const std::string& ctx) {
  if (!j.is_number_integer()) throw ConfigError(ctx + ": expected an integer");
  return j.get<int>();
}

SystemConfig parse_config(const json& j) {
  check_keys(j,
             {"n_b", "n_s", "n_l", "T_s", "N", "P_s_min", "P_s_max", "P_b_min", "P_b_max",
              "x_min", "x_max", "x_b_min", "x_b_max", "C_s", "C_b1", "C_b2", "C_g1",
              "C_g2", "lambda_b", "q", "r", "p0"},
             "config");
  SystemConfig def = default_system_config();
  SystemConfig cfg;
  cfg.n_b = j.contains("n_b") ? get_int(j["n_b"], "config.n_b") : def.n_b;
  cfg.n_s = j.contains("n_s") ? get_int(j["n_s"], "config.n_s") : def.n_s;
  cfg.n_l = j.contains("n_l") ? get_int(j["n_l"], "config.n_l") : def.n_l;
  cfg.T_s = j.contains("T_s") ? get_number(j["T_s"], "config.T_s") : def.T_s;
  cfg.N = j.contains("N") ? get_int(j["N"], "config.N") : def.N;

  auto vec_field = [&](const char* key, const Vec& dflt, int n) -> Vec {
    if (j.contains(key)) return parse_vec(j[key], n, std::string("config.") + key);
    if (dflt.size() == n) return dflt;
    throw ConfigError(std::string("config.") + key +
                      " must be given when unit counts differ from the defaults");
  };
  cfg.P_s_min = vec_field("P_s_min", def.P_s_min, cfg.n_s);
  cfg.P_s_max = vec_field("P_s_max", def.P_s_max, cfg.n_s);
  cfg.C_s = vec_field("C_s", def.C_s, cfg.n_s);
  cfg.P_b_min = vec_field("P_b_min", def.P_b_min, cfg.n_b);
  cfg.P_b_max = vec_field("P_b_max", def.P_b_max, cfg.n_b);
  cfg.x_min = vec_field("x_min", def.x_min, cfg.n_b);
  cfg.x_max = vec_field("x_max", def.x_max, cfg.n_b);
  cfg.x_b_min = vec_field("x_b_min", def.x_b_min, cfg.n_b);
  cfg.x_b_max = vec_field("x_b_max", def.x_b_max, cfg.n_b);
  cfg.C_b1 = vec_field("C_b1", def.C_b1, cfg.n_b);
  cfg.C_b2 = vec_field("C_b2", def.C_b2, cfg.n_b);
  cfg.lambda_b = vec_field("lambda_b", def.lambda_b, cfg.n_b);
  cfg.C_g1 = j.contains("C_g1") ? get_number(j["C_g1"], "config.C_g1") : def.C_g1;
  cfg.C_g2 = j.contains("C_g2") ? get_number(j["C_g2"], "config.C_g2") : def.C_g2;

  auto diag_field = [&](const char* key, const Mat& dflt) -> Mat {
    if (!j.contains(key))
      return dflt.rows() == cfg.n_b
                 ? dflt
                 : throw ConfigError(std::string("config.") + key +
                                     " must be given when n_b differs from the default");
    return parse_vec(j[key], cfg.n_b, std::string("config.") + key).asDiagonal();
  };
  cfg.Q = diag_field("q", def.Q);
  cfg.R = diag_field("r", def.R);
  cfg.P0 = diag_field("p0", def.P0);
  cfg.validate();
  return cfg;
}

FaultEvent parse_fault(const json& j, const SystemConfig& cfg, const std::string& ctx) {
  check_keys(j, {"kind", "index", "layer", "start_hours", "end_hours"}, ctx);
  for (const char* k : {"kind", "index", "start_hours", "end_hours"})
    if (!j.contains(k)) throw ConfigError(ctx + ": missing key '" + k + "'");
  FaultEvent f;
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "battery")
    f.kind = FaultEvent::Kind::Battery;
  else if (kind == "pv")
    f.kind = FaultEvent::Kind::Pv;
  else if (kind == "load")
    f.kind = FaultEvent::Kind::Load;
  else
    throw ConfigError(ctx + ": unknown unit kind '" + kind + "'");
  f.index = get_int(j["index"], ctx + ".index");
  const std::string layer = j.contains("layer") ? j["layer"].get<std::string>()
                                                : std::string("communication");
  if (layer == "electrical")
    f.layer = FaultEvent::Layer::Electrical;
  else if (layer == "communication")
    f.layer = FaultEvent::Layer::Communication;
  else if (layer == "both")
    f.layer = FaultEvent::Layer::Both;
  else
    throw ConfigError(ctx + ": unknown layer '" + layer + "'");
  f.start_hours = get_number(j["start_hours"], ctx + ".start_hours");
  f.end_hours = get_number(j["end_hours"], ctx + ".end_hours");
  f.validate(cfg);
  return f;
}

DisturbanceModel parse_disturbance(const json& j) {
  check_keys(j, {"kind", "omega_box", "upsilon_box"}, "disturbance");
  DisturbanceModel d;
  if (j.contains("kind")) {
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "none")
      d.kind = DisturbanceModel::Kind::None;
    else if (kind == "uniform-box")
      d.kind = DisturbanceModel::Kind::UniformBox;
    else if (kind == "boundary")
      d.kind = DisturbanceModel::Kind::Boundary;
    else
      throw ConfigError("disturbance: unknown kind '" + kind + "'");
  }
  if (j.contains("omega_box")) d.omega_box = get_number(j["omega_box"], "disturbance.omega_box");
  if (j.contains("upsilon_box"))
    d.upsilon_box = get_number(j["upsilon_box"], "disturbance.upsilon_box");
  d.validate();
  return d;
}

GridMode parse_mode(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "islanded") return GridMode::islanded();
    if (s == "grid_variable") return GridMode::grid_variable();
    throw ConfigError("mode: unknown value '" + s + "'");
  }
  if (j.is_object()) {
    check_keys(j, {"grid_fixed"}, "mode");
    if (!j.contains("grid_fixed")) throw ConfigError("mode: expected key 'grid_fixed'");
    return GridMode::grid_fixed(get_number(j["grid_fixed"], "mode.grid_fixed"));
  }
  throw ConfigError("mode: expected string or object");
}

}  // namespace

void FaultEvent::validate(const SystemConfig& cfg) const {
  require(start_hours >= 0 && start_hours < end_hours,
          "fault event must have 0 <= start < end");
  const int n = kind == Kind::Battery ? cfg.n_b : kind == Kind::Pv ? cfg.n_s : cfg.n_l;
  require(index >= 0 && index < n, "fault event unit index out of range");
  if (kind == Kind::Load)
    require(layer == Layer::Electrical,
            "loads carry no command link; only electrical faults apply");
}

void DisturbanceModel::validate() const {
  require(omega_box >= 0 && upsilon_box >= 0, "disturbance boxes must be non-negative");
}

int Scenario::num_steps() const {
  const double steps = duration_hours / config.T_s;
  const int k = static_cast<int>(std::lround(steps));
  require(std::abs(steps - k) <= 1e-9 && k >= 1, "duration must be a multiple of T_s");
  return k;
}

void Scenario::validate() const {
  config.validate();
  disturbance.validate();
  for (const auto& f : faults) f.validate(config);
  require(pv_scale.size() == config.n_s, "pv_scale length mismatch");
  require(load_scale.size() == config.n_l, "load_scale length mismatch");
  require((pv_scale.array() >= 0).all() && (load_scale.array() >= 0).all(),
          "profile scales must be non-negative");
  require(x0.size() == config.n_b && x_hat0.size() == config.n_b,
          "initial state length mismatch");

  profiles.validate();
  require(std::abs(profiles.t_hours[0]) <= 1e-12, "profiles must start at t=0");
  require(std::abs(profiles.step_hours() - config.T_s) <= 1e-9,
          "profile grid step must equal T_s");
  const int needed = num_steps() + config.N + 1;
  require(profiles.rows() >= needed, "profiles must cover duration + N*T_s");

  const Ellipsoid e0 = make_ellipsoid(x_hat0, config.P0);
  require(contains(e0, x0), "x0 must lie in the initial estimation ellipsoid");
}

Scenario default_scenario() {
  Scenario s;
  s.pv_scale = Vec(3);
  s.pv_scale << 0.5, 1.0, 1.5;
  s.load_scale = Vec(3);
  s.load_scale << 0.4, 0.8, 1.2;
  s.x0 = Vec(3);
  s.x0 << 3.0, 4.0, 6.0;
  s.x_hat0 = Vec(3);
  s.x_hat0 << 3.1, 4.1, 5.8;
  return s;
}

Scenario parse_scenario(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scenario JSON parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scenario: top level must be an object");
  check_keys(j,
             {"schema_version", "name", "mode", "config", "profiles", "pv_scale",
              "load_scale", "faults", "disturbance", "seed", "duration_hours",
              "compensation_enabled", "x0", "x_hat0", "network"},
             "scenario");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != 1)
    throw ConfigError("scenario: schema_version must be the integer 1");

  Scenario s = default_scenario();
  if (j.contains("name")) s.name = j["name"].get<std::string>();
  if (j.contains("config")) s.config = parse_config(j["config"]);
  if (j.contains("mode")) s.mode = parse_mode(j["mode"]);
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("duration_hours"))
    s.duration_hours = get_number(j["duration_hours"], "duration_hours");
  if (j.contains("compensation_enabled")) {
    if (!j["compensation_enabled"].is_boolean())
      throw ConfigError("compensation_enabled: expected a Boolean");
    s.compensation_enabled = j["compensation_enabled"].get<bool>();
  }
  if (j.contains("pv_scale")) s.pv_scale = parse_vec(j["pv_scale"], s.config.n_s, "pv_scale");
  if (j.contains("load_scale"))
    s.load_scale = parse_vec(j["load_scale"], s.config.n_l, "load_scale");
  if (j.contains("x0")) s.x0 = parse_vec(j["x0"], s.config.n_b, "x0");
  if (j.contains("x_hat0")) s.x_hat0 = parse_vec(j["x_hat0"], s.config.n_b, "x_hat0");
  if (s.pv_scale.size() != s.config.n_s || s.load_scale.size() != s.config.n_l ||
      s.x0.size() != s.config.n_b || s.x_hat0.size() != s.config.n_b)
    throw ConfigError(
        "pv_scale/load_scale/x0/x_hat0 must be given when unit counts differ from the "
        "defaults");
  if (j.contains("disturbance")) s.disturbance = parse_disturbance(j["disturbance"]);
  if (j.contains("faults")) {
    if (!j["faults"].is_array()) throw ConfigError("faults: expected an array");
    int idx = 0;
    for (const auto& f : j["faults"])
      s.faults.push_back(parse_fault(f, s.config, "faults[" + std::to_string(idx++) + "]"));
  }
  if (j.contains("network")) {
    const json& n = j["network"];
    check_keys(n, {"host", "port", "delay_jitter", "json_transport"}, "network");
    if (n.contains("host")) s.network.host = n["host"].get<std::string>();
    if (n.contains("port")) s.network.port = get_int(n["port"], "network.port");
    if (n.contains("delay_jitter"))
      s.network.delay_jitter = get_number(n["delay_jitter"], "network.delay_jitter");
    if (n.contains("json_transport")) {
      if (!n["json_transport"].is_boolean())
        throw ConfigError("network.json_transport: expected a Boolean");
      s.network.json_transport = n["json_transport"].get<bool>();
    }
  }

  if (!j.contains("profiles"))
    throw ConfigError("scenario: missing 'profiles' (path or generation spec)");
  const json& p = j["profiles"];
  if (p.is_string()) {
    std::filesystem::path path(p.get<std::string>());
    if (path.is_relative() && !base_dir.empty()) path = std::filesystem::path(base_dir) / path;
    s.profiles = load_profile_csv(path.string());
  } else if (p.is_object()) {
    check_keys(p, {"forecast_band", "seed", "duration_hours", "step_hours"}, "profiles");
    ProfileGenOptions g;
    g.step_hours = p.contains("step_hours")
                       ? get_number(p["step_hours"], "profiles.step_hours")
                       : s.config.T_s;
    g.duration_hours = p.contains("duration_hours")
                           ? get_number(p["duration_hours"], "profiles.duration_hours")
                           : s.duration_hours + s.config.N * s.config.T_s;
    if (p.contains("forecast_band"))
      g.forecast_band = get_number(p["forecast_band"], "profiles.forecast_band");
    if (p.contains("seed")) g.seed = p["seed"].get<std::uint64_t>();
    s.profiles = generate_profiles(g);
  } else {
    throw ConfigError("profiles: expected a path string or a generation object");
  }

  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string config_to_json_text(const SystemConfig& cfg) {
  json j;
  j["n_b"] = cfg.n_b;
  j["n_s"] = cfg.n_s;
  j["n_l"] = cfg.n_l;
  j["T_s"] = cfg.T_s;
  j["N"] = cfg.N;
  auto put = [&j](const char* key, const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    j[key] = a;
  };
  put("P_s_min", cfg.P_s_min);
  put("P_s_max", cfg.P_s_max);
  put("P_b_min", cfg.P_b_min);
  put("P_b_max", cfg.P_b_max);
  put("x_min", cfg.x_min);
  put("x_max", cfg.x_max);
  put("x_b_min", cfg.x_b_min);
  put("x_b_max", cfg.x_b_max);
  put("C_s", cfg.C_s);
  put("C_b1", cfg.C_b1);
  put("C_b2", cfg.C_b2);
  put("lambda_b", cfg.lambda_b);
  j["C_g1"] = cfg.C_g1;
  j["C_g2"] = cfg.C_g2;
  put("q", cfg.Q.diagonal());
  put("r", cfg.R.diagonal());
  put("p0", cfg.P0.diagonal());
  return j.dump();
}

SystemConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config JSON parse error: ") + e.what());
  }
  return parse_config(j);
}

ConnectionState apply_faults(const std::vector<FaultEvent>& faults, double t_hours,
                             const ConnectionState& base) {
  ConnectionState c = base;
  for (const auto& f : faults) {
    if (t_hours < f.start_hours || t_hours >= f.end_hours) continue;
    const bool elec = f.layer != FaultEvent::Layer::Communication;
    const bool comm = f.layer != FaultEvent::Layer::Electrical;
    switch (f.kind) {
      case FaultEvent::Kind::Battery:
        if (elec) c.G_b[f.index] = 0;
        if (comm) c.A_b[f.index] = 0;
        break;
      case FaultEvent::Kind::Pv:
        if (elec) c.G_s[f.index] = 0;
        if (comm) c.A_s[f.index] = 0;
        break;
      case FaultEvent::Kind::Load:
        c.G_l[f.index] = 0;
        break;
    }
  }
  return c;
}

namespace {

Vec sample_in_ellipsoid(double box, const Mat& shape, Rng& rng, bool boundary) {
  const int n = static_cast<int>(shape.rows());
  if (boundary) {
    const Mat E = cholesky_lower(shape);
    Vec u(n);
    double norm = 0.0;
    do {
      for (int i = 0; i < n; ++i) u[i] = rng.uniform(-1.0, 1.0);
      norm = u.norm();
    } while (norm < 1e-12);
    return E * (u / norm);
  }
  Eigen::LLT<Mat> llt(shape);
  Vec w(n);
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (int i = 0; i < n; ++i) w[i] = rng.uniform(-box, box);
    const double q = w.dot(llt.solve(w));
    if (q <= 1.0) return w;
  }
  // Box protrudes far outside the ellipsoid: project the last draw onto it.
  const double q = w.dot(llt.solve(w));
  return w / std::sqrt(q);
}

}  // namespace

std::pair<Vec, Vec> sample_disturbance(const DisturbanceModel& model,
                                       const NoiseBounds& bounds, Rng& rng) {
  const int n = static_cast<int>(bounds.Q.rows());
  if (model.kind == DisturbanceModel::Kind::None)
    return {Vec::Zero(n), Vec::Zero(static_cast<int>(bounds.R.rows()))};
  const bool boundary = model.kind == DisturbanceModel::Kind::Boundary;
  Vec omega = sample_in_ellipsoid(model.omega_box, bounds.Q, rng, boundary);
  Vec upsilon = sample_in_ellipsoid(model.upsilon_box, bounds.R, rng, boundary);
  return {omega, upsilon};
}

}  // namespace mgd
