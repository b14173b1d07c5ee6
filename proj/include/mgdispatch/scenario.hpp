#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgdispatch/ellipsoid.hpp"
#include "mgdispatch/profiles.hpp"
#include "mgdispatch/types.hpp"

namespace mgd {

struct FaultEvent {
  enum class Kind { Battery, Pv, Load };
  enum class Layer { Electrical, Communication, Both };

  Kind kind = Kind::Battery;
  int index = 0;
  Layer layer = Layer::Communication;
  double start_hours = 0.0;
  double end_hours = 0.0;  // active on the half-open interval [start, end)

  void validate(const SystemConfig& cfg) const;
};

struct DisturbanceModel {
  enum class Kind { None, UniformBox, Boundary };

  Kind kind = Kind::UniformBox;
  double omega_box = 0.1;    // per-axis bound on the process disturbance
  double upsilon_box = 0.02; // per-axis bound on the measurement noise

  void validate() const;
};

// Deterministic uniform source: the raw engine stream is mapped to doubles
// by hand so sequences are identical across standard-library versions.
struct Rng {
  std::mt19937_64 gen;

  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

struct NetworkOptions {
  std::string host = "127.0.0.1";
  int port = 0;                  // 0 = pick an ephemeral port
  double delay_jitter = 0.0;     // max artificial pre-send delay per data frame, wall seconds
  bool json_transport = false;   // use the JSON-lines debug transport
};

struct Scenario {
  std::string name = "scenario";
  SystemConfig config = default_system_config();
  GridMode mode = GridMode::islanded();
  ProfileData profiles;
  Vec pv_scale;    // per-PV-unit multiple of the base profile
  Vec load_scale;  // per-load multiple
  std::vector<FaultEvent> faults;
  DisturbanceModel disturbance;
  std::uint64_t seed = 1;
  double duration_hours = 24.0;
  bool compensation_enabled = true;
  Vec x0;      // true initial SoC
  Vec x_hat0;  // initial estimate (ellipsoid center)
  NetworkOptions network;

  int num_steps() const;
  void validate() const;
};

// The Table-I three-unit layout: scales [0.5,1,1.5] / [0.4,0.8,1.2],
// x(0)=[3,4,6], x_hat(0)=[3.1,4.1,5.8]; profiles must still be attached.
Scenario default_scenario();

// Strict JSON ingestion: unknown keys anywhere are rejected; omitted fields
// take the defaults above. Relative profile paths resolve against the
// scenario file's directory; a "profiles" object generates them instead.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& json_text, const std::string& base_dir);

ConnectionState apply_faults(const std::vector<FaultEvent>& faults, double t_hours,
                             const ConnectionState& base);

// Full-precision config echo for trace metadata; from-text applies the same
// strict parse as scenario ingestion.
std::string config_to_json_text(const SystemConfig& cfg);
SystemConfig config_from_json_text(const std::string& text);

// One process-disturbance / measurement-noise pair; each lies in its
// ellipsoid (boundary kind: quadratic form exactly 1).
std::pair<Vec, Vec> sample_disturbance(const DisturbanceModel& model,
                                       const NoiseBounds& bounds, Rng& rng);

}  // namespace mgd
