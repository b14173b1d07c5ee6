#include "mgdispatch/model.hpp"

#include <algorithm>
#include <sstream>

namespace mgd {

namespace {

void check_binary(const VecI& v, const char* name) {
  for (int i = 0; i < v.size(); ++i) {
    if (v[i] != 0 && v[i] != 1) {
      std::ostringstream os;
      os << name << "[" << i << "] must be 0 or 1, got " << v[i];
      throw DimensionError(os.str());
    }
  }
}

void check_elementwise_le(const Vec& lo, const Vec& hi, const char* what) {
  for (int i = 0; i < lo.size(); ++i) {
    if (!(lo[i] <= hi[i])) {
      std::ostringstream os;
      os << what << " violated at index " << i << ": " << lo[i] << " > " << hi[i];
      throw ConfigError(os.str());
    }
  }
}

}  // namespace

void SystemConfig::validate() const {
  if (n_b < 1 || n_s < 0 || n_l < 0)
    throw ConfigError("unit counts must satisfy n_b >= 1, n_s >= 0, n_l >= 0");
  if (!(T_s > 0.0)) throw ConfigError("T_s must be positive");
  if (N < 1) throw ConfigError("horizon N must be at least 1");

  auto check_len = [](const Vec& v, int n, const char* name) {
    if (v.size() != n) {
      std::ostringstream os;
      os << name << " has length " << v.size() << ", expected " << n;
      throw ConfigError(os.str());
    }
  };
  check_len(P_s_min, n_s, "P_s_min");
  check_len(P_s_max, n_s, "P_s_max");
  check_len(C_s, n_s, "C_s");
  check_len(P_b_min, n_b, "P_b_min");
  check_len(P_b_max, n_b, "P_b_max");
  check_len(x_min, n_b, "x_min");
  check_len(x_max, n_b, "x_max");
  check_len(x_b_min, n_b, "x_b_min");
  check_len(x_b_max, n_b, "x_b_max");
  check_len(C_b1, n_b, "C_b1");
  check_len(C_b2, n_b, "C_b2");
  check_len(lambda_b, n_b, "lambda_b");

  check_elementwise_le(P_s_min, P_s_max, "P_s_min <= P_s_max");
  check_elementwise_le(P_b_min, P_b_max, "P_b_min <= P_b_max");
  check_elementwise_le(x_min, x_b_min, "x_min <= x_b_min");
  check_elementwise_le(x_b_min, x_b_max, "x_b_min <= x_b_max");
  check_elementwise_le(x_b_max, x_max, "x_b_max <= x_max");

  if (lambda_b.minCoeff() < 0.0)
    throw ConfigError("lambda_b entries must be nonnegative");
  if (lambda_b.maxCoeff() <= 0.0)
    throw ConfigError("lambda_b must have at least one positive entry");

  auto check_spd = [this](const Mat& m, const char* name) {
    if (m.rows() != n_b || m.cols() != n_b) {
      std::ostringstream os;
      os << name << " must be " << n_b << "x" << n_b;
      throw ConfigError(os.str());
    }
    if (!is_spd(m)) {
      std::ostringstream os;
      os << name << " must be symmetric positive definite";
      throw ConfigError(os.str());
    }
  };
  check_spd(Q, "Q");
  check_spd(R, "R");
  check_spd(P0, "P0");
}

SystemConfig default_system_config() {
  SystemConfig c;
  c.n_b = 3;
  c.n_s = 3;
  c.n_l = 3;
  c.T_s = 0.25;
  c.N = 12;

  c.P_s_min = Vec::Zero(3);
  c.P_s_max = (Vec(3) << 1.5, 3.0, 4.5).finished();
  c.P_b_min = (Vec(3) << -3.0, -4.0, -6.0).finished();
  c.P_b_max = (Vec(3) << 3.0, 4.0, 6.0).finished();
  c.x_min = Vec::Zero(3);
  c.x_max = (Vec(3) << 12.0, 16.0, 24.0).finished();
  c.x_b_min = (Vec(3) << 0.2, 0.3, 0.3).finished();
  c.x_b_max = (Vec(3) << 11.8, 15.7, 23.7).finished();

  c.C_s = Vec::Ones(3);
  c.C_b1 = (Vec(3) << 0.2, 0.15, 0.1).finished();
  c.C_b2 = (Vec(3) << 0.3, 0.3, 0.3).finished();
  c.C_g1 = 0.5;
  c.C_g2 = 0.1;
  c.lambda_b = Vec::Ones(3);

  c.Q = 0.03 * Mat::Identity(3, 3);
  c.R = 0.0012 * Mat::Identity(3, 3);
  c.P0 = 0.12 * Mat::Identity(3, 3);
  return c;
}

ConnectionState ConnectionState::all_connected(int n_b, int n_s, int n_l) {
  ConnectionState c;
  c.A_b = VecI::Ones(n_b);
  c.G_b = VecI::Ones(n_b);
  c.A_s = VecI::Ones(n_s);
  c.G_s = VecI::Ones(n_s);
  c.G_l = VecI::Ones(n_l);
  return c;
}

void ConnectionState::validate(int n_b, int n_s, int n_l) const {
  require(A_b.size() == n_b && G_b.size() == n_b, "battery connection length mismatch");
  require(A_s.size() == n_s && G_s.size() == n_s, "PV connection length mismatch");
  require(G_l.size() == n_l, "load connection length mismatch");
  check_binary(A_b, "A_b");
  check_binary(G_b, "G_b");
  check_binary(A_s, "A_s");
  check_binary(G_s, "G_s");
  check_binary(G_l, "G_l");
}

std::string to_string(const GridMode& mode) {
  switch (mode.kind) {
    case GridMode::Kind::Islanded:
      return "islanded";
    case GridMode::Kind::GridVariable:
      return "grid_variable";
    case GridMode::Kind::GridFixed: {
      std::ostringstream os;
      os << "grid_fixed(" << mode.fixed_value << ")";
      return os.str();
    }
  }
  return "unknown";
}

Vec battery_setpoint(const Vec& u_cmd, const Vec& u_default, const VecI& A_b) {
  require(u_cmd.size() == u_default.size() && u_cmd.size() == A_b.size(),
          "battery_setpoint length mismatch");
  check_binary(A_b, "A_b");
  Vec a = A_b.cast<double>();
  return a.cwiseProduct(u_cmd) + (Vec::Ones(a.size()) - a).cwiseProduct(u_default);
}

Vec battery_power(const Vec& u_hat, const VecI& G_b) {
  require(u_hat.size() == G_b.size(), "battery_power length mismatch");
  check_binary(G_b, "G_b");
  return G_b.cast<double>().cwiseProduct(u_hat);
}

Vec pv_power(const Vec& u_hat, const Vec& P_avail, const VecI& G_s) {
  require(u_hat.size() == P_avail.size() && u_hat.size() == G_s.size(),
          "pv_power length mismatch");
  check_binary(G_s, "G_s");
  return G_s.cast<double>().cwiseProduct(u_hat.cwiseMin(P_avail));
}

Vec step_dynamics(const Vec& x, const Vec& P_b, const Vec& w, double T_s) {
  require(x.size() == P_b.size() && x.size() == w.size(), "step_dynamics length mismatch");
  return x - T_s * (P_b + w);
}

Vec measure(const Vec& x, const Vec& v, const VecI& A_b) {
  require(x.size() == v.size() && x.size() == A_b.size(), "measure length mismatch");
  check_binary(A_b, "A_b");
  return A_b.cast<double>().cwiseProduct(x + v);
}

LtiMatrices assemble_lti(const SystemConfig& cfg, const ConnectionState& conn,
                         const Vec& u_b_default) {
  conn.validate(cfg.n_b, cfg.n_s, cfg.n_l);
  require(u_b_default.size() == cfg.n_b, "u_b_default length mismatch");

  const int n = cfg.n_b;
  Vec a = conn.A_b.cast<double>();
  Vec g = conn.G_b.cast<double>();

  LtiMatrices m;
  m.B = (-cfg.T_s * g.cwiseProduct(a)).asDiagonal();
  m.C = Mat(a.asDiagonal());
  m.D = Mat(a.asDiagonal());
  m.F = -cfg.T_s * Mat::Identity(n, n);
  m.delta = -cfg.T_s * g.cwiseProduct((Vec::Ones(n) - a).cwiseProduct(u_b_default));
  return m;
}

ControlPlan update_default_plan(const ControlPlan& plan,
                                const std::optional<Vec>& delivered, int k) {
  if (delivered.has_value()) {
    require(delivered->size() >= 1, "delivered plan must be non-empty");
    return ControlPlan{*delivered, k};
  }
  const int t = k - plan.origin_step;
  if (t < 0) throw DimensionError("plan update step precedes plan origin");
  const int n_last = static_cast<int>(plan.setpoints.size()) - 1;
  require(n_last >= 0, "stored plan must be non-empty");
  Vec shifted(n_last + 1);
  for (int n = 0; n <= n_last; ++n)
    shifted[n] = plan.setpoints[std::min(t + n, n_last)];
  return ControlPlan{shifted, k};
}

double plan_value_at(const ControlPlan& plan, int k) {
  const int t = k - plan.origin_step;
  if (t < 0) throw DimensionError("plan lookup precedes plan origin");
  const int n_last = static_cast<int>(plan.setpoints.size()) - 1;
  require(n_last >= 0, "stored plan must be non-empty");
  return plan.setpoints[std::min(t, n_last)];
}

double power_balance_residual(const Vec& P_s, const Vec& P_b, double P_g,
                              const Vec& P_l, const ConnectionState& conn) {
  require(P_s.size() == conn.G_s.size(), "P_s length mismatch");
  require(P_b.size() == conn.G_b.size(), "P_b length mismatch");
  require(P_l.size() == conn.G_l.size(), "P_l length mismatch");
  double acc = P_g;
  acc += conn.G_s.cast<double>().dot(P_s);
  acc += conn.G_b.cast<double>().dot(P_b);
  acc -= conn.G_l.cast<double>().dot(P_l);
  return acc;
}

}  // namespace mgd
