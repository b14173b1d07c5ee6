#pragma once

#include <string>

#include "mgdispatch/linalg.hpp"

namespace mgd {

// Base PV-availability and load series on a uniform time grid, actual and
// forecast variants. Per-unit series are obtained by scaling these bases
// with the scenario's proportionality factors.
struct ProfileData {
  Vec t_hours;
  Vec pv_actual, pv_forecast;
  Vec load_actual, load_forecast;

  int rows() const { return static_cast<int>(t_hours.size()); }
  double step_hours() const;
  // Uniform grid, non-negative powers, forecast == actual at the first row.
  void validate() const;
  // Row index of time t (must lie on the grid within 1e-9 h).
  int index_of(double t) const;
};

struct ProfileGenOptions {
  double duration_hours = 24.0;
  double step_hours = 0.25;
  double start_hours = 0.0;
  double forecast_band = 0.0;  // relative error bound, e.g. 0.1 for +/-10%
  unsigned long long seed = 0; // phases of the forecast-error wiggle
};

// Smooth synthetic day: bell-shaped PV (daylight 6h-18h, 1.5 pu peak) and a
// double-peak residential load. The forecast deviates from the actual by a
// smooth bounded relative error that ramps in from zero at the first sample.
ProfileData generate_profiles(const ProfileGenOptions& opts);

// CSV with columns t_hours, pv_actual_pu, pv_forecast_pu, load_actual_pu,
// load_forecast_pu; one header row.
ProfileData load_profile_csv(const std::string& path);
void write_profile_csv(const std::string& path, const ProfileData& data);

}  // namespace mgd
