#include "mgdispatch/netharness.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <random>
#include <thread>
#include <utility>

#include "mgdispatch/controller.hpp"
#include "mgdispatch/model.hpp"
#include "mgdispatch/wire.hpp"

namespace mgd {

namespace {

// First agent failure of a run; checked by every blocking mailbox wait so an
// error anywhere unwinds the whole harness instead of deadlocking it.
class ErrorSlot {
 public:
  void post(const std::string& msg) {
    std::lock_guard lk(m_);
    if (!set_) {
      set_ = true;
      msg_ = msg;
    }
  }
  bool get(std::string* out) const {
    std::lock_guard lk(m_);
    if (set_) *out = msg_;
    return set_;
  }

 private:
  mutable std::mutex m_;
  bool set_ = false;
  std::string msg_;
};

template <typename T>
class Mailbox {
 public:
  explicit Mailbox(const ErrorSlot* err) : err_(err) {}

  void push(T v) {
    {
      std::lock_guard lk(m_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }

  T pop() {
    using namespace std::chrono_literals;
    std::unique_lock lk(m_);
    const auto deadline = std::chrono::steady_clock::now() + 30s;
    while (q_.empty()) {
      cv_.wait_for(lk, 100ms);
      if (!q_.empty()) break;
      std::string msg;
      if (err_->get(&msg)) throw HarnessError("peer agent failed: " + msg);
      if (std::chrono::steady_clock::now() > deadline)
        throw HarnessError("harness stalled waiting for a message");
    }
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  const ErrorSlot* err_;
  std::mutex m_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

// Physics side channel: per-tick link states and grid-sensing summary one
// hub distributes and reports. Entries exist only for units the hub owns.
struct HubTickInfo {
  int battery_link = 1;
  int pv_link = 1;
  std::vector<double> g_payload;  // [G_b][G_s][G_l] of the owned units
};

struct CtrlOut {
  ConnectionState conn;
  Dispatch d;
  EstimateUpdate e;
};

bool same_conn(const ConnectionState& a, const ConnectionState& b) {
  return a.A_b == b.A_b && a.G_b == b.G_b && a.A_s == b.A_s && a.G_s == b.G_s &&
         a.G_l == b.G_l;
}

// Bounded random pre-send pause for data frames; the logical clock makes the
// run insensitive to it, which the delay-independence property checks.
class SendDelay {
 public:
  SendDelay(double jitter_seconds, unsigned long long seed)
      : jitter_(jitter_seconds), rng_(seed) {}
  void operator()() {
    if (jitter_ <= 0.0) return;
    std::uniform_real_distribution<double> u(0.0, jitter_);
    std::this_thread::sleep_for(std::chrono::duration<double>(u(rng_)));
  }

 private:
  double jitter_;
  std::mt19937_64 rng_;
};

WireFrame make_tick(int k, std::uint8_t phase) {
  WireFrame f;
  f.type = WireType::Tick;
  f.flags = phase;
  f.unit_id = kIdBroadcast;
  f.k = static_cast<std::uint32_t>(k);
  return f;
}

WireFrame make_data(WireType type, std::uint16_t unit_id, int k, std::vector<double> payload) {
  WireFrame f;
  f.type = type;
  f.unit_id = unit_id;
  f.k = static_cast<std::uint32_t>(k);
  f.payload = std::move(payload);
  return f;
}

WireFrame expect_frame(FrameSocket& fs, const char* who) {
  WireFrame f;
  if (!fs.recv(&f)) throw HarnessError(std::string(who) + ": unexpected connection close");
  return f;
}

void expect_tick(const WireFrame& f, int k, std::uint8_t phase, const char* who) {
  if (f.type != WireType::Tick || f.k != static_cast<std::uint32_t>(k) || f.flags != phase)
    throw HarnessError(std::string(who) + ": protocol error, expected TICK(" +
                       std::to_string(k) + "," + std::to_string(phase) + ")");
}

struct Topology {
  int n_b, n_s, n_l, n_hubs;
  bool has_battery(int g) const { return g < n_b; }
  bool has_pv(int g) const { return g < n_s; }
  bool has_load(int g) const { return g < n_l; }
};

// ---------------------------------------------------------------------------
// Controller agent

struct ControllerArgs {
  const Scenario* sc;
  TcpListener* listener;
  Topology topo;
  Mailbox<CtrlOut>* out;
  SendDelay delay;
  bool json;
};

void controller_main(ControllerArgs a) {
  const SystemConfig& cfg = a.sc->config;
  std::vector<std::unique_ptr<FrameSocket>> hubs(a.topo.n_hubs);
  for (int i = 0; i < a.topo.n_hubs; ++i) {
    auto fs = std::make_unique<FrameSocket>(a.listener->accept_fd(), a.json);
    const WireFrame reg = expect_frame(*fs, "controller");
    if (reg.type != WireType::Ack || reg.unit_id < kIdHubBase ||
        reg.unit_id >= kIdHubBase + a.topo.n_hubs)
      throw HarnessError("controller: bad hub registration");
    const int g = reg.unit_id - kIdHubBase;
    if (hubs[g]) throw HarnessError("controller: duplicate hub registration");
    hubs[g] = std::move(fs);
  }

  DispatchController ctrl(cfg, a.sc->mode, a.sc->compensation_enabled, a.sc->x_hat0,
                          a.sc->profiles, a.sc->pv_scale, a.sc->load_scale);
  ctrl.plan_initial();

  const int K = a.sc->num_steps();
  for (int k = 0; k < K; ++k) {
    for (auto& hub : hubs) hub->send(make_tick(k, kTickSample));

    Telemetry t;
    t.y = Vec::Zero(cfg.n_b);
    t.pv_avail_actual = Vec::Zero(cfg.n_s);
    t.load_actual = Vec::Zero(cfg.n_l);
    Vec load_raw = Vec::Zero(cfg.n_l);
    t.conn.A_b = VecI::Zero(cfg.n_b);
    t.conn.G_b = VecI::Zero(cfg.n_b);
    t.conn.A_s = VecI::Zero(cfg.n_s);
    t.conn.G_s = VecI::Zero(cfg.n_s);
    t.conn.G_l = VecI::Zero(cfg.n_l);

    for (int g = 0; g < a.topo.n_hubs; ++g) {
      for (;;) {
        const WireFrame f = expect_frame(*hubs[g], "controller");
        if (f.k != static_cast<std::uint32_t>(k))
          throw HarnessError("controller: frame for wrong tick");
        if (f.type == WireType::Measurement) {
          const int i = f.unit_id - kIdBatteryBase;
          require(i >= 0 && i < cfg.n_b && f.payload.size() == 1, "bad MEASUREMENT frame");
          t.y[i] = f.payload[0];
          t.conn.A_b[i] = 1;
        } else if (f.type == WireType::Availability) {
          if (f.unit_id >= kIdLoadBase) {
            const int i = f.unit_id - kIdLoadBase;
            require(i >= 0 && i < cfg.n_l && f.payload.size() == 1, "bad AVAILABILITY frame");
            load_raw[i] = f.payload[0];
          } else {
            const int i = f.unit_id - kIdPvBase;
            require(i >= 0 && i < cfg.n_s && f.payload.size() == 1, "bad AVAILABILITY frame");
            t.pv_avail_actual[i] = f.payload[0];
            t.conn.A_s[i] = 1;
          }
        } else if (f.type == WireType::Ack) {
          std::size_t pos = 0;
          auto take = [&]() {
            require(pos < f.payload.size(), "short hub summary");
            return static_cast<int>(f.payload[pos++]);
          };
          if (a.topo.has_battery(g)) t.conn.G_b[g] = take();
          if (a.topo.has_pv(g)) t.conn.G_s[g] = take();
          if (a.topo.has_load(g)) t.conn.G_l[g] = take();
          require(pos == f.payload.size(), "overlong hub summary");
          break;
        } else {
          throw HarnessError("controller: unexpected frame type in telemetry phase");
        }
      }
    }
    for (int i = 0; i < cfg.n_l; ++i)
      if (t.conn.G_l[i] == 1) t.load_actual[i] = load_raw[i];

    const Dispatch d = ctrl.decide_setpoints(k, t);

    for (int g = 0; g < a.topo.n_hubs; ++g) {
      if (a.topo.has_battery(g)) {
        const Vec& sp = d.delivered_b[g].setpoints;
        a.delay();
        hubs[g]->send(make_data(WireType::SetpointPlan,
                                static_cast<std::uint16_t>(kIdBatteryBase + g), k,
                                {sp.data(), sp.data() + sp.size()}));
      }
      if (a.topo.has_pv(g)) {
        const Vec& sp = d.delivered_s[g].setpoints;
        a.delay();
        hubs[g]->send(make_data(WireType::SetpointPlan,
                                static_cast<std::uint16_t>(kIdPvBase + g), k,
                                {sp.data(), sp.data() + sp.size()}));
      }
      hubs[g]->send(make_tick(k, kTickApply));
    }

    const EstimateUpdate e = ctrl.update_between_samples(k, t);
    a.out->push(CtrlOut{t.conn, d, e});
  }
}

// ---------------------------------------------------------------------------
// Hub relay

struct HubArgs {
  int g = 0;
  std::string host;
  std::uint16_t ctrl_port = 0;
  TcpListener* listener;
  Topology topo;
  Mailbox<HubTickInfo>* info;
  // Counter slots owned by the caller; only this hub writes them.
  LinkCounter* battery_counter = nullptr;
  LinkCounter* pv_counter = nullptr;
  LinkCounter* load_counter = nullptr;
  bool json = false;
};

void hub_main(HubArgs a) {
  FrameSocket up(tcp_connect(a.host, a.ctrl_port), a.json);
  up.send(make_data(WireType::Ack, static_cast<std::uint16_t>(kIdHubBase + a.g), 0, {}));

  const int n_units = (a.topo.has_battery(a.g) ? 1 : 0) + (a.topo.has_pv(a.g) ? 1 : 0) +
                      (a.topo.has_load(a.g) ? 1 : 0);
  std::unique_ptr<FrameSocket> battery, pv, load;
  for (int i = 0; i < n_units; ++i) {
    auto fs = std::make_unique<FrameSocket>(a.listener->accept_fd(), a.json);
    const WireFrame reg = expect_frame(*fs, "hub");
    if (reg.type != WireType::Ack) throw HarnessError("hub: bad unit registration");
    if (reg.unit_id == kIdBatteryBase + a.g)
      battery = std::move(fs);
    else if (reg.unit_id == kIdPvBase + a.g)
      pv = std::move(fs);
    else if (reg.unit_id == kIdLoadBase + a.g)
      load = std::move(fs);
    else
      throw HarnessError("hub: registration from foreign unit " + std::to_string(reg.unit_id));
  }

  // Fixed relay order keeps the run deterministic: battery, PV, load.
  struct Port {
    FrameSocket* fs;
    LinkCounter* counter;
    std::uint16_t id;
    int link = 1;
  };
  std::vector<Port> ports;
  if (battery) ports.push_back({battery.get(), a.battery_counter,
                                static_cast<std::uint16_t>(kIdBatteryBase + a.g)});
  if (pv) ports.push_back({pv.get(), a.pv_counter, static_cast<std::uint16_t>(kIdPvBase + a.g)});
  if (load) ports.push_back({load.get(), a.load_counter,
                             static_cast<std::uint16_t>(kIdLoadBase + a.g)});

  WireFrame f;
  for (int k = 0;; ++k) {
    if (!up.recv(&f)) return;  // controller done: orderly shutdown
    expect_tick(f, k, kTickSample, "hub");

    const HubTickInfo info = a.info->pop();
    for (auto& p : ports) {
      if (p.id >= kIdLoadBase)
        p.link = 1;  // loads carry no communication layer
      else if (p.id >= kIdPvBase)
        p.link = info.pv_link;
      else
        p.link = info.battery_link;
    }
    for (auto& p : ports) p.fs->send(f);

    for (auto& p : ports) {
      const WireFrame r = expect_frame(*p.fs, "hub");
      if ((r.type != WireType::Measurement && r.type != WireType::Availability) ||
          r.unit_id != p.id || r.k != static_cast<std::uint32_t>(k))
        throw HarnessError("hub: unexpected unit response");
      p.counter->sent += 1;
      if (p.link == 1) {
        up.send(r);
        p.counter->delivered += 1;
      } else {
        p.counter->dropped += 1;
      }
    }
    up.send(make_data(WireType::Ack, static_cast<std::uint16_t>(kIdHubBase + a.g), k,
                      info.g_payload));

    for (;;) {
      const WireFrame dn = expect_frame(up, "hub");
      if (dn.type == WireType::Tick) {
        expect_tick(dn, k, kTickApply, "hub");
        for (auto& p : ports) p.fs->send(dn);
        break;
      }
      if (dn.type != WireType::SetpointPlan || dn.k != static_cast<std::uint32_t>(k))
        throw HarnessError("hub: unexpected downlink frame");
      Port* dest = nullptr;
      for (auto& p : ports)
        if (p.id == dn.unit_id) dest = &p;
      if (dest == nullptr) throw HarnessError("hub: plan for foreign unit");
      dest->counter->sent += 1;
      if (dest->link == 1) {
        dest->fs->send(dn);
        dest->counter->delivered += 1;
      } else {
        dest->counter->dropped += 1;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Unit agents

struct UnitArgs {
  std::uint16_t id = 0;
  std::string host;
  std::uint16_t hub_port = 0;
  int N = 0;
  Mailbox<double>* phys;     // driver -> unit: local sensor reading
  Mailbox<double>* applied;  // unit -> driver: actuated set-point (null for loads)
  SendDelay delay;
  bool json = false;
};

void unit_main(UnitArgs a) {
  FrameSocket fs(tcp_connect(a.host, a.hub_port), a.json);
  fs.send(make_data(WireType::Ack, a.id, 0, {}));

  const bool is_battery = a.id >= kIdBatteryBase && a.id < kIdBatteryBase + 0x100;
  const bool is_load = a.id >= kIdLoadBase && a.id < kIdLoadBase + 0x100;
  ControlPlan plan{Vec::Zero(a.N + 1), 0};

  WireFrame f;
  while (fs.recv(&f)) {
    if (f.type == WireType::Tick && f.flags == kTickSample) {
      const double sense = a.phys->pop();
      a.delay();
      fs.send(make_data(is_battery ? WireType::Measurement : WireType::Availability, a.id,
                        static_cast<int>(f.k), {sense}));
    } else if (f.type == WireType::SetpointPlan) {
      require(!is_load, "load received a set-point plan");
      require(static_cast<int>(f.payload.size()) == a.N + 1, "plan payload length");
      plan.setpoints = Eigen::Map<const Vec>(f.payload.data(), a.N + 1);
      plan.origin_step = static_cast<int>(f.k);
    } else if (f.type == WireType::Tick && f.flags == kTickApply) {
      if (!is_load) a.applied->push(plan_value_at(plan, static_cast<int>(f.k)));
    } else {
      throw HarnessError("unit " + std::to_string(a.id) + ": unexpected frame");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// World driver

RunResult run_networked(const Scenario& scenario, NetStats* stats) {
  scenario.validate();
  const SystemConfig& cfg = scenario.config;
  const int K = scenario.num_steps();
  const Topology topo{cfg.n_b, cfg.n_s, cfg.n_l,
                      std::max({cfg.n_b, cfg.n_s, cfg.n_l})};
  const std::string& host = scenario.network.host;
  const bool json = scenario.network.json_transport;
  const double jitter = scenario.network.delay_jitter;
  auto delay_seed = [&](std::uint16_t id) {
    return scenario.seed * 0x9E3779B97F4A7C15ull + id;
  };

  NetStats local_stats;
  NetStats& ns = stats != nullptr ? *stats : local_stats;
  ns.battery_links.assign(cfg.n_b, {});
  ns.pv_links.assign(cfg.n_s, {});
  ns.load_links.assign(cfg.n_l, {});
  ns.applied_b = Mat::Zero(K, cfg.n_b);
  ns.applied_s = Mat::Zero(K, cfg.n_s);

  ErrorSlot err;
  TcpListener ctrl_listener(host, scenario.network.port);
  std::vector<std::unique_ptr<TcpListener>> hub_listeners;
  for (int g = 0; g < topo.n_hubs; ++g)
    hub_listeners.push_back(std::make_unique<TcpListener>(host, 0));

  Mailbox<CtrlOut> ctrl_out(&err);
  std::vector<std::unique_ptr<Mailbox<HubTickInfo>>> hub_info;
  for (int g = 0; g < topo.n_hubs; ++g)
    hub_info.push_back(std::make_unique<Mailbox<HubTickInfo>>(&err));
  auto make_boxes = [&err](int n) {
    std::vector<std::unique_ptr<Mailbox<double>>> v;
    for (int i = 0; i < n; ++i) v.push_back(std::make_unique<Mailbox<double>>(&err));
    return v;
  };
  auto phys_b = make_boxes(cfg.n_b), phys_s = make_boxes(cfg.n_s), phys_l = make_boxes(cfg.n_l);
  auto applied_b = make_boxes(cfg.n_b), applied_s = make_boxes(cfg.n_s);

  std::vector<std::thread> threads;
  auto spawn = [&threads, &err](std::string name, auto fn) {
    threads.emplace_back([&err, name = std::move(name), fn = std::move(fn)]() mutable {
      try {
        fn();
      } catch (const std::exception& e) {
        err.post(name + ": " + e.what());
      } catch (...) {
        err.post(name + ": unknown failure");
      }
    });
  };

  spawn("controller", [&, args = ControllerArgs{&scenario, &ctrl_listener, topo, &ctrl_out,
                                                SendDelay(jitter, delay_seed(1)), json}] {
    controller_main(args);
  });
  for (int g = 0; g < topo.n_hubs; ++g) {
    HubArgs ha;
    ha.g = g;
    ha.host = host;
    ha.ctrl_port = ctrl_listener.port();
    ha.listener = hub_listeners[g].get();
    ha.topo = topo;
    ha.info = hub_info[g].get();
    ha.battery_counter = topo.has_battery(g) ? &ns.battery_links[g] : nullptr;
    ha.pv_counter = topo.has_pv(g) ? &ns.pv_links[g] : nullptr;
    ha.load_counter = topo.has_load(g) ? &ns.load_links[g] : nullptr;
    ha.json = json;
    spawn("hub " + std::to_string(g), [ha] { hub_main(ha); });
  }
  auto spawn_unit = [&](std::uint16_t id, int g, Mailbox<double>* phys,
                        Mailbox<double>* applied) {
    UnitArgs ua{id,   host,    hub_listeners[g]->port(), cfg.N, phys,
                applied, SendDelay(jitter, delay_seed(id)), json};
    spawn("unit " + std::to_string(id), [ua] { unit_main(ua); });
  };
  for (int i = 0; i < cfg.n_b; ++i)
    spawn_unit(static_cast<std::uint16_t>(kIdBatteryBase + i), i, phys_b[i].get(),
               applied_b[i].get());
  for (int i = 0; i < cfg.n_s; ++i)
    spawn_unit(static_cast<std::uint16_t>(kIdPvBase + i), i, phys_s[i].get(),
               applied_s[i].get());
  for (int i = 0; i < cfg.n_l; ++i)
    spawn_unit(static_cast<std::uint16_t>(kIdLoadBase + i), i, phys_l[i].get(), nullptr);

  RunResult result;
  result.trace.metadata = trace_metadata(scenario);
  result.trace.records.reserve(K);

  const ConnectionState base = ConnectionState::all_connected(cfg.n_b, cfg.n_s, cfg.n_l);
  const NoiseBounds bounds{cfg.Q, cfg.R};
  Rng rng(scenario.seed);
  Vec x = scenario.x0;

  try {
    for (int k = 0; k < K; ++k) {
      const double t_h = k * cfg.T_s;
      const ConnectionState conn = apply_faults(scenario.faults, t_h, base);
      const auto [omega, upsilon] = sample_disturbance(scenario.disturbance, bounds, rng);
      const Vec pv_avail = scenario.profiles.pv_actual[k] * scenario.pv_scale;
      const Vec load = scenario.profiles.load_actual[k] * scenario.load_scale;
      const Vec y = measure(x, upsilon, conn.A_b);

      for (int g = 0; g < topo.n_hubs; ++g) {
        HubTickInfo info;
        if (topo.has_battery(g)) {
          info.battery_link = conn.A_b[g];
          info.g_payload.push_back(static_cast<double>(conn.G_b[g]));
        }
        if (topo.has_pv(g)) {
          info.pv_link = conn.A_s[g];
          info.g_payload.push_back(static_cast<double>(conn.G_s[g]));
        }
        if (topo.has_load(g)) info.g_payload.push_back(static_cast<double>(conn.G_l[g]));
        hub_info[g]->push(std::move(info));
      }
      for (int i = 0; i < cfg.n_b; ++i) phys_b[i]->push(x[i] + upsilon[i]);
      for (int i = 0; i < cfg.n_s; ++i) phys_s[i]->push(pv_avail[i]);
      for (int i = 0; i < cfg.n_l; ++i) phys_l[i]->push(load[i]);

      Vec u_applied_b(cfg.n_b), u_applied_s(cfg.n_s);
      for (int i = 0; i < cfg.n_b; ++i) u_applied_b[i] = applied_b[i]->pop();
      for (int i = 0; i < cfg.n_s; ++i) u_applied_s[i] = applied_s[i]->pop();
      ns.applied_b.row(k) = u_applied_b.transpose();
      ns.applied_s.row(k) = u_applied_s.transpose();

      CtrlOut c = ctrl_out.pop();
      if (!same_conn(c.conn, conn))
        throw HarnessError("controller-inferred connection state diverged from ground truth");

      PlantSnapshot snap;
      snap.x = x;
      snap.y = y;
      snap.P_b = battery_power(u_applied_b, conn.G_b);
      snap.P_s = pv_power(u_applied_s, pv_avail, conn.G_s);
      snap.P_l = Vec::Zero(cfg.n_l);
      for (int i = 0; i < cfg.n_l; ++i)
        if (conn.G_l[i] == 1) snap.P_l[i] = load[i];

      x = step_dynamics(x, snap.P_b, omega, cfg.T_s);

      TraceRecord rec = make_trace_record(k, cfg.T_s, conn, snap, c.d, c.e, scenario.mode);
      if (rec.flags & kFlagMpcFallback) ++result.mpc_fallback_steps;
      if (rec.flags & kFlagSmeFallback) ++result.sme_fallback_steps;
      result.trace.records.push_back(std::move(rec));
    }
  } catch (...) {
    err.post("driver: aborting");
    for (auto& t : threads)
      if (t.joinable()) t.join();
    throw;
  }

  for (auto& t : threads)
    if (t.joinable()) t.join();

  std::string msg;
  if (err.get(&msg)) throw HarnessError(msg);

  result.report = verify_trace(result.trace);
  return result;
}

}  // namespace mgd
