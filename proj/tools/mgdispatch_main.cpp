#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Cholesky>

#include "mgdispatch/netharness.hpp"
#include "mgdispatch/sim.hpp"
#include "mgdispatch/trace.hpp"

namespace {

using namespace mgd;

constexpr int kExitViolations = 2;

// Relative output paths land in MGDISPATCH_OUT_DIR when it is set.
std::string out_path(const std::string& path) {
  const char* dir = std::getenv("MGDISPATCH_OUT_DIR");
  if (dir == nullptr || *dir == '\0' || path.empty() || path.front() == '/') return path;
  std::string d(dir);
  if (d.back() != '/') d += '/';
  return d + path;
}

GridMode parse_mode(const std::string& text) {
  if (text == "islanded") return GridMode::islanded();
  if (text == "grid_variable") return GridMode::grid_variable();
  const std::string prefix = "grid_fixed:";
  if (text.rfind(prefix, 0) == 0) {
    std::size_t used = 0;
    const double v = std::stod(text.substr(prefix.size()), &used);
    if (used != text.size() - prefix.size())
      throw ConfigError("trailing characters in mode value: " + text);
    return GridMode::grid_fixed(v);
  }
  throw ConfigError("unknown mode '" + text +
                    "' (expected islanded, grid_variable or grid_fixed:<value>)");
}

void print_run_summary(const RunResult& r, const std::string& trace_path) {
  std::cout << format_report(r.report);
  if (r.mpc_fallback_steps > 0)
    std::cout << "planner fallback steps: " << r.mpc_fallback_steps << "\n";
  if (r.sme_fallback_steps > 0)
    std::cout << "estimator fallback steps: " << r.sme_fallback_steps << "\n";
  std::cout << "trace: " << trace_path << "\n";
}

int cmd_run(const std::string& scenario_path, const std::string& mode_text,
            long long seed, bool seed_set, bool no_compensation, bool networked,
            std::string out) {
  Scenario sc = load_scenario(scenario_path);
  if (!mode_text.empty()) sc.mode = parse_mode(mode_text);
  if (seed_set) sc.seed = static_cast<std::uint64_t>(seed);
  if (no_compensation) sc.compensation_enabled = false;
  if (out.empty()) out = sc.name + ".trace.csv";
  out = out_path(out);

  RunResult r;
  if (networked) {
    NetStats stats;
    r = run_networked(sc, &stats);
    auto show = [](const char* kind, const std::vector<LinkCounter>& links) {
      for (std::size_t i = 0; i < links.size(); ++i)
        std::cout << kind << " link " << i << ": sent=" << links[i].sent
                  << " delivered=" << links[i].delivered
                  << " dropped=" << links[i].dropped << "\n";
    };
    show("battery", stats.battery_links);
    show("pv", stats.pv_links);
    show("load", stats.load_links);
  } else {
    r = run(sc);
  }
  write_trace(out, r.trace);
  print_run_summary(r, out);
  return r.report.clean() ? 0 : kExitViolations;
}

int cmd_verify(const std::string& trace_path) {
  const TraceFile trace = read_trace(trace_path);
  const VerifyReport report = verify_trace(trace);
  std::cout << format_report(report);
  return report.clean() ? 0 : kExitViolations;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string csv_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string plot_soc(const TraceFile& trace) {
  const int n_b = static_cast<int>(trace.records.front().x.size());
  std::string s = "t_hours";
  for (int i = 0; i < n_b; ++i) {
    const std::string u = std::to_string(i + 1);
    s += ",x_" + u + ",x_hat_" + u + ",lo_" + u + ",hi_" + u;
  }
  s += "\n";
  for (const TraceRecord& r : trace.records) {
    s += csv_num(r.t_hours);
    for (int i = 0; i < n_b; ++i) {
      const double half = std::sqrt(std::max(0.0, r.P(i, i)));
      s += "," + csv_num(r.x[i]) + "," + csv_num(r.x_hat[i]) +
           "," + csv_num(r.x_hat[i] - half) + "," + csv_num(r.x_hat[i] + half);
    }
    s += "\n";
  }
  return s;
}

std::string plot_power(const TraceFile& trace) {
  const TraceRecord& first = trace.records.front();
  std::string s = "t_hours";
  for (int i = 0; i < first.P_s.size(); ++i) s += ",P_s_" + std::to_string(i + 1);
  for (int i = 0; i < first.P_b.size(); ++i) s += ",P_b_" + std::to_string(i + 1);
  for (int i = 0; i < first.P_l.size(); ++i) s += ",P_l_" + std::to_string(i + 1);
  s += ",P_g,sigma\n";
  for (const TraceRecord& r : trace.records) {
    s += csv_num(r.t_hours);
    for (int i = 0; i < r.P_s.size(); ++i) s += "," + csv_num(r.P_s[i]);
    for (int i = 0; i < r.P_b.size(); ++i) s += "," + csv_num(r.P_b[i]);
    for (int i = 0; i < r.P_l.size(); ++i) s += "," + csv_num(r.P_l[i]);
    s += "," + csv_num(r.P_g) + "," + csv_num(r.sigma) + "\n";
  }
  return s;
}

std::string plot_ellipse(const TraceFile& trace, int ax1, int ax2, int points) {
  const int n = static_cast<int>(trace.records.front().x.size());
  if (ax1 < 0 || ax2 < 0 || ax1 >= n || ax2 >= n || ax1 == ax2)
    throw ConfigError("ellipse axes out of range");
  std::string s = "k,t_hours,theta,e1,e2,center1,center2,x1,x2\n";
  for (const TraceRecord& r : trace.records) {
    Mat sub(2, 2);
    sub << r.P(ax1, ax1), r.P(ax1, ax2), r.P(ax2, ax1), r.P(ax2, ax2);
    Eigen::LLT<Mat> llt(sub);
    if (llt.info() != Eigen::Success)
      throw DegenerateSetError("shape submatrix not positive definite at step " +
                               std::to_string(r.k));
    const Mat L = llt.matrixL();
    const Vec c = (Vec(2) << r.x_hat[ax1], r.x_hat[ax2]).finished();
    for (int t = 0; t < points; ++t) {
      const double th = 2.0 * M_PI * t / points;
      const Vec p = c + L * (Vec(2) << std::cos(th), std::sin(th)).finished();
      s += std::to_string(r.k) + "," + csv_num(r.t_hours) + "," + csv_num(th) + "," +
           csv_num(p[0]) + "," + csv_num(p[1]) + "," + csv_num(c[0]) + "," +
           csv_num(c[1]) + "," + csv_num(r.x[ax1]) + "," + csv_num(r.x[ax2]) + "\n";
    }
  }
  return s;
}

std::string plot_grid(const TraceFile& trace) {
  std::string s = "t_hours,P_g,P_g_planned,residual,sigma,sigma_hat,flags\n";
  for (const TraceRecord& r : trace.records)
    s += csv_num(r.t_hours) + "," + csv_num(r.P_g) + "," + csv_num(r.P_g_planned) + "," +
         csv_num(r.residual) + "," + csv_num(r.sigma) + "," + csv_num(r.sigma_hat) + "," +
         std::to_string(r.flags) + "\n";
  return s;
}

int cmd_plotdata(const std::string& trace_path, const std::string& figure,
                 const std::string& pair_text, std::string out) {
  const TraceFile trace = read_trace(trace_path);
  if (trace.records.empty()) throw IoError("trace has no rows: " + trace_path);
  if (out.empty()) out = figure + ".csv";
  out = out_path(out);

  std::string text;
  if (figure == "soc") {
    text = plot_soc(trace);
  } else if (figure == "power") {
    text = plot_power(trace);
  } else if (figure == "ellipse") {
    int ax1 = 0, ax2 = 1;
    if (!pair_text.empty() &&
        std::sscanf(pair_text.c_str(), "%d,%d", &ax1, &ax2) != 2)
      throw ConfigError("--pair expects i,j");
    text = plot_ellipse(trace, ax1, ax2, 64);
  } else if (figure == "grid") {
    text = plot_grid(trace);
  } else {
    throw ConfigError("unknown figure '" + figure +
                      "' (expected soc, power, ellipse or grid)");
  }
  write_text(out, text);
  std::cout << out << "\n";
  return 0;
}

int cmd_gen_profiles(double duration, double step, double start, double band,
                     long long seed, std::string out) {
  ProfileGenOptions opts;
  opts.duration_hours = duration;
  opts.step_hours = step;
  opts.start_hours = start;
  opts.forecast_band = band;
  opts.seed = static_cast<std::uint64_t>(seed);
  const ProfileData data = generate_profiles(opts);
  out = out_path(out);
  write_profile_csv(out, data);
  std::cout << out << " (" << data.rows() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Microgrid dispatch simulator"};
  app.require_subcommand(1);

  std::string scenario_path, mode_text, out, trace_path, figure, pair_text;
  long long seed = 0;
  bool no_compensation = false, networked = false;
  double duration = 24.0, step = 0.25, start = 0.0, band = 0.0;

  CLI::App* c_run = app.add_subcommand("run", "Run a scenario and write its trace");
  c_run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  c_run->add_option("--mode", mode_text,
                    "Override grid mode (islanded, grid_variable, grid_fixed:<value>)");
  CLI::Option* seed_opt = c_run->add_option("--seed", seed, "Override the scenario seed");
  c_run->add_flag("--no-compensation", no_compensation, "Disable deviation compensation");
  c_run->add_flag("--networked", networked, "Run on the message-passing harness");
  c_run->add_option("--out", out, "Trace output path (default <name>.trace.csv)");

  CLI::App* c_verify = app.add_subcommand("verify", "Recheck invariants of a trace file");
  c_verify->add_option("trace", trace_path, "Trace CSV file")->required();

  CLI::App* c_plot = app.add_subcommand("plotdata", "Extract plot-ready series from a trace");
  c_plot->add_option("trace", trace_path, "Trace CSV file")->required();
  c_plot->add_option("--figure", figure, "soc, power, ellipse or grid")->required();
  c_plot->add_option("--pair", pair_text, "Ellipse axes as i,j (0-based, default 0,1)");
  c_plot->add_option("--out", out, "Output CSV path (default <figure>.csv)");

  CLI::App* c_gen = app.add_subcommand("gen-profiles", "Generate a profile CSV");
  c_gen->add_option("--duration", duration, "Hours to generate");
  c_gen->add_option("--step", step, "Sample step in hours");
  c_gen->add_option("--start", start, "Start offset in hours");
  c_gen->add_option("--band", band, "Relative forecast error band");
  c_gen->add_option("--seed", seed, "Forecast wiggle seed");
  c_gen->add_option("--out", out, "Output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_run->parsed())
      return cmd_run(scenario_path, mode_text, seed, seed_opt->count() > 0,
                     no_compensation, networked, out);
    if (c_verify->parsed()) return cmd_verify(trace_path);
    if (c_plot->parsed()) return cmd_plotdata(trace_path, figure, pair_text, out);
    if (c_gen->parsed())
      return cmd_gen_profiles(duration, step, start, band, seed, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
