#include "mgdispatch/trace.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <Eigen/Cholesky>

#include "mgdispatch/scenario.hpp"

namespace mgd {

namespace {

unsigned to_mask(const VecI& v) {
  require(v.size() <= 31, "mask encoding supports at most 31 units");
  unsigned m = 0;
  for (int i = 0; i < v.size(); ++i)
    if (v[i]) m |= 1u << i;
  return m;
}

VecI from_mask(unsigned m, int n) {
  VecI v(n);
  for (int i = 0; i < n; ++i) v[i] = (m >> i) & 1u;
  return v;
}

std::string header_for(int n_b, int n_s, int n_l) {
  std::string h = "k,t_hours";
  char buf[48];
  auto add = [&](const char* fmt, int i) {
    std::snprintf(buf, sizeof(buf), fmt, i);
    h += buf;
  };
  for (int i = 0; i < n_b; ++i) add(",x_%d", i);
  for (int i = 0; i < n_b; ++i) add(",xhat_%d", i);
  for (int i = 0; i < n_b; ++i) add(",y_%d", i);
  h += ",p_trace";
  for (int i = 0; i < n_b; ++i)
    for (int j = 0; j < n_b; ++j) {
      std::snprintf(buf, sizeof(buf), ",P_%d_%d", i, j);
      h += buf;
    }
  for (int i = 0; i < n_s; ++i) add(",u_hat_s_%d", i);
  for (int i = 0; i < n_b; ++i) add(",u_b_star_%d", i);
  for (int i = 0; i < n_s; ++i) add(",ps_%d", i);
  for (int i = 0; i < n_b; ++i) add(",pb_%d", i);
  for (int i = 0; i < n_l; ++i) add(",pl_%d", i);
  h += ",pg,pg_planned,sigma,sigma_hat,residual";
  h += ",ab_mask,gb_mask,as_mask,gs_mask,gl_mask";
  h += ",containment,sme_cert_eig,flags";
  return h;
}

}  // namespace

SystemConfig TraceFile::config() const {
  auto it = metadata.find("config");
  require(it != metadata.end(), "trace metadata lacks a config entry");
  return config_from_json_text(it->second);
}

GridMode TraceFile::mode() const {
  auto it = metadata.find("mode");
  require(it != metadata.end(), "trace metadata lacks a mode entry");
  const std::string& s = it->second;
  if (s == "islanded") return GridMode::islanded();
  if (s == "grid_variable") return GridMode::grid_variable();
  if (s.rfind("grid_fixed:", 0) == 0) return GridMode::grid_fixed(std::stod(s.substr(11)));
  throw ConfigError("trace metadata: unknown mode '" + s + "'");
}

std::string render_trace(const TraceFile& trace) {
  const SystemConfig cfg = trace.config();
  std::string out;
  for (const auto& [key, value] : trace.metadata)
    out += "# " + key + "=" + value + "\n";
  out += header_for(cfg.n_b, cfg.n_s, cfg.n_l);
  out += "\n";

  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    out += buf;
  };
  auto uns = [&](unsigned v) {
    std::snprintf(buf, sizeof(buf), ",%u", v);
    out += buf;
  };
  auto round9 = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::strtod(buf, nullptr);
  };
  for (const TraceRecord& r : trace.records) {
    require(r.x.size() == cfg.n_b && r.P.rows() == cfg.n_b && r.P_s.size() == cfg.n_s &&
                r.P_l.size() == cfg.n_l,
            "trace record dimensions disagree with the config");
    std::snprintf(buf, sizeof(buf), "%d", r.k);
    out += buf;
    num(r.t_hours);
    for (int i = 0; i < cfg.n_b; ++i) num(r.x[i]);
    for (int i = 0; i < cfg.n_b; ++i) num(r.x_hat[i]);
    for (int i = 0; i < cfg.n_b; ++i) num(r.y[i]);
    // Trace of the diagonal as printed: derived from the same rounded cells
    // a reader sees, so rendered files re-render byte-identically.
    double p_trace = 0.0;
    for (int i = 0; i < cfg.n_b; ++i) p_trace += round9(r.P(i, i));
    num(p_trace);
    for (int i = 0; i < cfg.n_b; ++i)
      for (int j = 0; j < cfg.n_b; ++j) num(r.P(i, j));
    for (int i = 0; i < cfg.n_s; ++i) num(r.u_hat_s[i]);
    for (int i = 0; i < cfg.n_b; ++i) num(r.u_b_star[i]);
    for (int i = 0; i < cfg.n_s; ++i) num(r.P_s[i]);
    for (int i = 0; i < cfg.n_b; ++i) num(r.P_b[i]);
    for (int i = 0; i < cfg.n_l; ++i) num(r.P_l[i]);
    num(r.P_g);
    num(r.P_g_planned);
    num(r.sigma);
    num(r.sigma_hat);
    num(r.residual);
    uns(to_mask(r.conn.A_b));
    uns(to_mask(r.conn.G_b));
    uns(to_mask(r.conn.A_s));
    uns(to_mask(r.conn.G_s));
    uns(to_mask(r.conn.G_l));
    uns(r.containment ? 1u : 0u);
    num(r.sme_cert_eig);
    uns(r.flags);
    out += "\n";
  }
  return out;
}

void write_trace(const std::string& path, const TraceFile& trace) {
  const std::string text = render_trace(trace);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write trace: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failure on " + path);
}

TraceFile parse_trace(const std::string& text) {
  TraceFile tf;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::string expected_header;
  SystemConfig cfg;
  int lineno = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      require(!have_header, "metadata lines must precede the header");
      std::string body = line.substr(1);
      if (!body.empty() && body[0] == ' ') body.erase(0, 1);
      const auto eq = body.find('=');
      require(eq != std::string::npos, "malformed metadata line: " + line);
      tf.metadata[body.substr(0, eq)] = body.substr(eq + 1);
      continue;
    }
    if (!have_header) {
      cfg = tf.config();
      expected_header = header_for(cfg.n_b, cfg.n_s, cfg.n_l);
      require(line == expected_header, "trace header does not match its config");
      have_header = true;
      continue;
    }

    std::vector<double> cells;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        cells.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("trace line " + std::to_string(lineno) + ": bad number '" + cell +
                      "'");
      }
    }
    const int nb = cfg.n_b, ns = cfg.n_s, nl = cfg.n_l;
    const size_t expected = 2 + 3 * nb + 1 + nb * nb + ns + nb + ns + nb + nl + 5 + 5 + 3;
    require(cells.size() == expected, "trace line " + std::to_string(lineno) +
                                          ": wrong cell count");
    size_t c = 0;
    TraceRecord r;
    r.k = static_cast<int>(cells[c++]);
    r.t_hours = cells[c++];
    auto take_vec = [&](int n) {
      Vec v(n);
      for (int i = 0; i < n; ++i) v[i] = cells[c++];
      return v;
    };
    r.x = take_vec(nb);
    r.x_hat = take_vec(nb);
    r.y = take_vec(nb);
    const double p_trace = cells[c++];
    r.P = Mat(nb, nb);
    for (int i = 0; i < nb; ++i)
      for (int j = 0; j < nb; ++j) r.P(i, j) = cells[c++];
    require(std::abs(p_trace - r.P.trace()) <= 1e-6 * std::max(1.0, std::abs(p_trace)),
            "trace line " + std::to_string(lineno) + ": p_trace inconsistent");
    r.u_hat_s = take_vec(ns);
    r.u_b_star = take_vec(nb);
    r.P_s = take_vec(ns);
    r.P_b = take_vec(nb);
    r.P_l = take_vec(nl);
    r.P_g = cells[c++];
    r.P_g_planned = cells[c++];
    r.sigma = cells[c++];
    r.sigma_hat = cells[c++];
    r.residual = cells[c++];
    r.conn.A_b = from_mask(static_cast<unsigned>(cells[c++]), nb);
    r.conn.G_b = from_mask(static_cast<unsigned>(cells[c++]), nb);
    r.conn.A_s = from_mask(static_cast<unsigned>(cells[c++]), ns);
    r.conn.G_s = from_mask(static_cast<unsigned>(cells[c++]), ns);
    r.conn.G_l = from_mask(static_cast<unsigned>(cells[c++]), nl);
    r.containment = cells[c++] != 0.0;
    r.sme_cert_eig = cells[c++];
    r.flags = static_cast<unsigned>(cells[c++]);
    tf.records.push_back(std::move(r));
  }
  require(have_header, "trace has no header row");
  return tf;
}

TraceFile read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  if (ss.str().empty()) throw IoError("empty trace file: " + path);
  return parse_trace(ss.str());
}

VerifyReport verify_trace(const TraceFile& trace) {
  require(!trace.records.empty(), "verify_trace on an empty trace");
  const SystemConfig cfg = trace.config();
  const GridMode mode = trace.mode();
  constexpr double kLimitTol = 1e-6;
  // Cells carry 9 significant digits; a ten-cell sum accumulates up to a few
  // 1e-8 of pure storage rounding, so consistency checks allow 1e-7.
  constexpr double kConsistencyTol = 1e-7;

  VerifyReport rep;
  rep.rows = static_cast<int>(trace.records.size());
  rep.max_cert_eig = -1.0;
  for (const TraceRecord& r : trace.records) {
    double sum = 0.0;  // net unit power fed into the bus
    for (int i = 0; i < cfg.n_s; ++i) sum += r.conn.G_s[i] * r.P_s[i];
    for (int i = 0; i < cfg.n_b; ++i) sum += r.conn.G_b[i] * r.P_b[i];
    for (int i = 0; i < cfg.n_l; ++i) sum -= r.conn.G_l[i] * r.P_l[i];
    const double residual = r.P_g_planned + sum;
    rep.max_abs_residual = std::max(rep.max_abs_residual, std::abs(residual));
    if (std::abs(residual - r.residual) > kConsistencyTol) ++rep.residual_mismatches;
    // Realized grid power must absorb the imbalance (zero when islanded).
    const double pg_expected = mode.kind == GridMode::Kind::Islanded ? 0.0 : -sum;
    if (std::abs(r.P_g - pg_expected) > kConsistencyTol) ++rep.residual_mismatches;

    Eigen::LLT<Mat> llt(r.P);
    bool inside = false;
    if (llt.info() == Eigen::Success) {
      const Vec d = r.x - r.x_hat;
      inside = d.dot(llt.solve(d)) <= 1.0 + 1e-9;
    }
    if (!inside) ++rep.containment_violations;
    if (inside != r.containment) ++rep.containment_mismatches;

    auto limit = [&rep](double v) {
      if (v > kLimitTol) {
        ++rep.limit_violations;
        rep.max_limit_violation = std::max(rep.max_limit_violation, v);
      }
    };
    for (int i = 0; i < cfg.n_s; ++i) {
      if (r.conn.G_s[i] == 0) {
        if (r.P_s[i] != 0.0) limit(std::abs(r.P_s[i]) + kLimitTol);
        continue;
      }
      limit(-r.P_s[i]);
      limit(r.P_s[i] - cfg.P_s_max[i]);
    }
    for (int i = 0; i < cfg.n_b; ++i) {
      if (r.conn.G_b[i] == 0) {
        if (r.P_b[i] != 0.0) limit(std::abs(r.P_b[i]) + kLimitTol);
        continue;
      }
      limit(r.P_b[i] - cfg.P_b_max[i]);
      limit(cfg.P_b_min[i] - r.P_b[i]);
      limit(r.u_b_star[i] - cfg.P_b_max[i]);
      limit(cfg.P_b_min[i] - r.u_b_star[i]);
    }

    rep.max_cert_eig = std::max(rep.max_cert_eig, r.sme_cert_eig);
    if (r.sme_cert_eig > 1e-7) ++rep.cert_violations;
    rep.sigma_max_abs = std::max(rep.sigma_max_abs, std::abs(r.sigma));
    if (r.sigma != 0.0) ++rep.sigma_nonzero_steps;
    if (mode.kind == GridMode::Kind::GridFixed)
      rep.grid_abs_dev_max = std::max(rep.grid_abs_dev_max,
                                      std::abs(r.P_g - mode.fixed_value));
    else if (mode.kind == GridMode::Kind::Islanded)
      rep.grid_abs_dev_max = std::max(rep.grid_abs_dev_max, std::abs(r.P_g));
  }
  return rep;
}

std::string format_report(const VerifyReport& r) {
  std::ostringstream os;
  os << "rows: " << r.rows << "\n"
     << "max |balance residual|: " << r.max_abs_residual << "\n"
     << "residual mismatches: " << r.residual_mismatches << "\n"
     << "containment violations: " << r.containment_violations << "\n"
     << "containment flag mismatches: " << r.containment_mismatches << "\n"
     << "limit violations: " << r.limit_violations
     << " (max " << r.max_limit_violation << ")\n"
     << "max certificate eigenvalue: " << r.max_cert_eig
     << " (violations: " << r.cert_violations << ")\n"
     << "max |sigma|: " << r.sigma_max_abs << " over " << r.sigma_nonzero_steps
     << " nonzero steps\n"
     << "max grid deviation: " << r.grid_abs_dev_max << "\n"
     << "verdict: " << (r.clean() ? "clean" : "violations found") << "\n";
  return os.str();
}

}  // namespace mgd
