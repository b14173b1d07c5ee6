#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "mgdispatch/netharness.hpp"
#include "mgdispatch/wire.hpp"

using namespace mgd;

namespace {

Scenario harness_scenario(std::uint64_t seed) {
  Scenario s = default_scenario();
  s.name = "netcase";
  s.duration_hours = 4.0;
  s.seed = seed;
  ProfileGenOptions opts;
  opts.duration_hours = 8.0;
  opts.forecast_band = 0.1;
  opts.seed = seed + 40;
  s.profiles = generate_profiles(opts);
  return s;
}

WireFrame sample_frame() {
  WireFrame f;
  f.type = WireType::SetpointPlan;
  f.flags = 3;
  f.unit_id = kIdBatteryBase + 2;
  f.k = 77;
  f.payload = {0.25, -1.5, 0.0, 3.25e-9, -0.0, 12345.678};
  return f;
}

}  // namespace

TEST_CASE("binary frames survive the codec unchanged") {
  const WireFrame f = sample_frame();
  const std::vector<std::uint8_t> bytes = encode_frame(f);
  const WireFrame g = decode_frame(bytes.data(), bytes.size());
  CHECK(g.version == 1);
  CHECK(g.type == f.type);
  CHECK(g.flags == f.flags);
  CHECK(g.unit_id == f.unit_id);
  CHECK(g.k == f.k);
  REQUIRE(g.payload.size() == f.payload.size());
  for (std::size_t i = 0; i < f.payload.size(); ++i) {
    CHECK(std::memcmp(&g.payload[i], &f.payload[i], sizeof(double)) == 0);
  }

  WireFrame empty;
  empty.type = WireType::Tick;
  empty.flags = kTickApply;
  empty.k = 9;
  const auto eb = encode_frame(empty);
  CHECK(eb.size() == 12 + 4);  // header + checksum, no payload
  const WireFrame back = decode_frame(eb.data(), eb.size());
  CHECK(back.payload.empty());
  CHECK(back.flags == kTickApply);
}

TEST_CASE("the decoder rejects damaged bytes") {
  const std::vector<std::uint8_t> bytes = encode_frame(sample_frame());

  std::vector<std::uint8_t> fl = bytes;
  fl[20] ^= 0x40;  // payload bit flip
  CHECK_THROWS_AS(decode_frame(fl.data(), fl.size()), WireError);

  fl = bytes;
  fl[fl.size() - 1] ^= 0x01;  // checksum flip
  CHECK_THROWS_AS(decode_frame(fl.data(), fl.size()), WireError);

  CHECK_THROWS_AS(decode_frame(bytes.data(), bytes.size() - 3), WireError);
  CHECK_THROWS_AS(decode_frame(bytes.data(), 5), WireError);

  fl = bytes;
  fl[0] = 2;  // unsupported version
  CHECK_THROWS_AS(decode_frame(fl.data(), fl.size()), WireError);

  // count field inconsistent with the byte length
  fl = bytes;
  fl[6] = static_cast<std::uint8_t>(fl[6] + 1);
  CHECK_THROWS_AS(decode_frame(fl.data(), fl.size()), WireError);
}

TEST_CASE("json frames carry the binary checksum") {
  const WireFrame f = sample_frame();
  const std::string line = frame_to_json_line(f);
  CHECK(line.find('\n') == std::string::npos);
  const WireFrame g = frame_from_json_line(line);
  CHECK(g.unit_id == f.unit_id);
  CHECK(g.k == f.k);
  REQUIRE(g.payload.size() == f.payload.size());
  for (std::size_t i = 0; i < f.payload.size(); ++i) {
    CHECK(std::memcmp(&g.payload[i], &f.payload[i], sizeof(double)) == 0);
  }

  // The crc field is the binary frame's checksum; altering any field breaks it.
  std::string bent = line;
  const auto pos = bent.find("\"k\":77");
  REQUIRE(pos != std::string::npos);
  bent.replace(pos, 6, "\"k\":78");
  CHECK_THROWS_AS(frame_from_json_line(bent), WireError);
  CHECK_THROWS_AS(frame_from_json_line("{\"not\": \"a frame\"}"), WireError);
  CHECK_THROWS_AS(frame_from_json_line("garbage"), WireError);
}

TEST_CASE("crc32 matches the well-known reference value") {
  const char* s = "123456789";
  CHECK(crc32_ieee(reinterpret_cast<const std::uint8_t*>(s), 9) == 0xCBF43926u);
  CHECK(crc32_ieee(nullptr, 0) == 0u);
}

TEST_CASE("the message-passing loop reproduces in-process traces") {
  Scenario s = harness_scenario(31);
  FaultEvent f;
  f.kind = FaultEvent::Kind::Battery;
  f.index = 1;
  f.layer = FaultEvent::Layer::Communication;
  f.start_hours = 1.0;
  f.end_hours = 2.5;
  s.faults.push_back(f);

  const RunResult gold = run(s);
  NetStats stats;
  const RunResult net = run_networked(s, &stats);

  CHECK(render_trace(net.trace) == render_trace(gold.trace));
  CHECK(net.report.clean());

  // Every data link conserves its frames; the faulted battery dropped
  // frames both ways across six outage ticks.
  for (const auto* links : {&stats.battery_links, &stats.pv_links, &stats.load_links}) {
    for (const LinkCounter& c : *links) CHECK(c.sent == c.delivered + c.dropped);
  }
  CHECK(stats.battery_links[1].dropped == 2 * 6);
  CHECK(stats.battery_links[0].dropped == 0);
  CHECK(stats.pv_links[1].dropped == 0);

  // The silent battery keeps actuating its stale plan: what the unit agent
  // applied equals the trace's dispatched set-point at every tick.
  REQUIRE(stats.applied_b.rows() == 16);
  for (int k = 0; k < 16; ++k) {
    for (int i = 0; i < 3; ++i) {
      CHECK(stats.applied_b(k, i) == net.trace.records[k].u_b_star[i]);
      CHECK(stats.applied_s(k, i) == net.trace.records[k].u_hat_s[i]);
    }
  }

  // While the command link was down the controller saw no measurement.
  for (int k = 4; k < 10; ++k) {
    CHECK(net.trace.records[k].conn.A_b[1] == 0);
    CHECK(net.trace.records[k].y[1] == 0.0);
  }
  CHECK(net.trace.records[3].conn.A_b[1] == 1);
  CHECK(net.trace.records[10].conn.A_b[1] == 1);
}

TEST_CASE("transport and pacing settings do not change the physics") {
  Scenario s = harness_scenario(33);
  const RunResult gold = run(s);

  s.network.json_transport = true;
  const RunResult js = run_networked(s);
  CHECK(render_trace(js.trace) == render_trace(gold.trace));

  s.network.json_transport = false;
  s.network.delay_jitter = 0.002;
  const RunResult slow = run_networked(s);
  CHECK(render_trace(slow.trace) == render_trace(gold.trace));
}
