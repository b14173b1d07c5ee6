#include "mgdispatch/profiles.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

namespace mgd {

namespace {

constexpr double kPi = 3.14159265358979323846;

double pv_base(double t) {
  const double h = std::fmod(t, 24.0);
  if (h <= 6.0 || h >= 18.0) return 0.0;
  const double s = std::sin(kPi * (h - 6.0) / 12.0);
  return 1.5 * s * s;
}

double load_base(double t) {
  const double h = std::fmod(t, 24.0);
  const double m = (h - 8.0) / 2.0;
  const double e = (h - 19.0) / 2.5;
  return 0.25 + 0.35 * std::exp(-m * m) + 0.5 * std::exp(-e * e);
}

}  // namespace

double ProfileData::step_hours() const {
  require(t_hours.size() >= 2, "profile needs at least two rows");
  return t_hours[1] - t_hours[0];
}

void ProfileData::validate() const {
  const int n = rows();
  require(n >= 2, "profile needs at least two rows");
  require(pv_actual.size() == n && pv_forecast.size() == n && load_actual.size() == n &&
              load_forecast.size() == n,
          "profile column lengths differ");
  const double dt = t_hours[1] - t_hours[0];
  require(dt > 0, "profile time grid must increase");
  for (int i = 1; i < n; ++i)
    require(std::abs(t_hours[i] - t_hours[i - 1] - dt) <= 1e-9,
            "profile time grid must be uniform");
  for (int i = 0; i < n; ++i)
    require(pv_actual[i] >= 0 && pv_forecast[i] >= 0 && load_actual[i] >= 0 &&
                load_forecast[i] >= 0,
            "profile powers must be non-negative");
  require(std::abs(pv_forecast[0] - pv_actual[0]) <= 1e-12 &&
              std::abs(load_forecast[0] - load_actual[0]) <= 1e-12,
          "forecast must match actual at the first sample");
}

int ProfileData::index_of(double t) const {
  const double dt = step_hours();
  const double idx = (t - t_hours[0]) / dt;
  const long k = std::lround(idx);
  require(std::abs(idx - static_cast<double>(k)) <= 1e-9 / dt && k >= 0 && k < rows(),
          "time not on the profile grid");
  return static_cast<int>(k);
}

ProfileData generate_profiles(const ProfileGenOptions& opts) {
  require(opts.step_hours > 0 && opts.duration_hours > 0, "invalid profile grid");
  require(opts.forecast_band >= 0 && opts.forecast_band < 1, "forecast band out of range");
  const int n = static_cast<int>(std::floor(opts.duration_hours / opts.step_hours + 1e-9)) + 1;

  std::mt19937_64 rng(opts.seed);
  auto unit = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const double phase_pv1 = 2 * kPi * unit(), phase_pv2 = 2 * kPi * unit();
  const double phase_ld1 = 2 * kPi * unit(), phase_ld2 = 2 * kPi * unit();

  auto wiggle = [&](double t, double p1, double p2) {
    // Convex combination of two incommensurate sinusoids: |.| <= 1.
    return 0.6 * std::sin(2 * kPi * t / 3.1 + p1) + 0.4 * std::sin(2 * kPi * t / 1.3 + p2);
  };

  ProfileData d;
  d.t_hours = Vec(n);
  d.pv_actual = Vec(n);
  d.pv_forecast = Vec(n);
  d.load_actual = Vec(n);
  d.load_forecast = Vec(n);
  for (int i = 0; i < n; ++i) {
    const double t = opts.start_hours + i * opts.step_hours;
    d.t_hours[i] = t;
    d.pv_actual[i] = pv_base(t);
    d.load_actual[i] = load_base(t);
    const double ramp = std::min(1.0, (i * opts.step_hours) / 0.5);
    const double band = opts.forecast_band * ramp;
    d.pv_forecast[i] = d.pv_actual[i] * (1.0 + band * wiggle(t, phase_pv1, phase_pv2));
    d.load_forecast[i] = d.load_actual[i] * (1.0 + band * wiggle(t, phase_ld1, phase_ld2));
  }
  d.validate();
  return d;
}

ProfileData load_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open profile CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty profile CSV: " + path);
  if (line != "t_hours,pv_actual_pu,pv_forecast_pu,load_actual_pu,load_forecast_pu")
    throw IoError("unexpected profile CSV header in " + path);

  std::vector<std::array<double, 5>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<double, 5> row{};
    std::istringstream ss(line);
    std::string cell;
    for (int c = 0; c < 5; ++c) {
      if (!std::getline(ss, cell, ','))
        throw IoError(path + ":" + std::to_string(lineno) + ": short row");
      try {
        row[c] = std::stod(cell);
      } catch (const std::exception&) {
        throw IoError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (std::getline(ss, cell, ','))
      throw IoError(path + ":" + std::to_string(lineno) + ": extra columns");
    rows.push_back(row);
  }

  ProfileData d;
  const int n = static_cast<int>(rows.size());
  d.t_hours = Vec(n);
  d.pv_actual = Vec(n);
  d.pv_forecast = Vec(n);
  d.load_actual = Vec(n);
  d.load_forecast = Vec(n);
  for (int i = 0; i < n; ++i) {
    d.t_hours[i] = rows[i][0];
    d.pv_actual[i] = rows[i][1];
    d.pv_forecast[i] = rows[i][2];
    d.load_actual[i] = rows[i][3];
    d.load_forecast[i] = rows[i][4];
  }
  d.validate();
  return d;
}

void write_profile_csv(const std::string& path, const ProfileData& data) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write profile CSV: " + path);
  out << "t_hours,pv_actual_pu,pv_forecast_pu,load_actual_pu,load_forecast_pu\n";
  char buf[160];
  for (int i = 0; i < data.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g\n", data.t_hours[i],
                  data.pv_actual[i], data.pv_forecast[i], data.load_actual[i],
                  data.load_forecast[i]);
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path);
}

}  // namespace mgd
