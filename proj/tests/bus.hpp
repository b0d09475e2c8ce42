// Minimal in-memory network for driving protocol state machines in tests:
// messages are delivered on the step after they are sent unless `drop` says otherwise.
#pragma once

#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "mcm/protocol.hpp"

namespace mcm::testing {

inline TimedTrajectory straight(double x0, double y, double v, double t0, int n = 30) {
  std::vector<TimedPoint> pts;
  for (int k = 0; k < n; ++k) pts.push_back({{x0 + v * 0.5 * k, y}, t0 + 0.5 * k});
  return TimedTrajectory(std::move(pts));
}

struct Bus {
  struct Station {
    CoordinationState state;
    std::vector<LocalEvent> events;  // consumed on the next step
    bool silent{false};              // outbound messages vanish
  };

  ProtocolParams params;
  double dt{0.01};
  long step_count{0};
  std::map<StationId, Station> stations;
  std::vector<McmMessage> in_flight;
  std::vector<McmMessage> sent;  // every message put on the air
  std::vector<std::pair<StationId, Notification>> notes;
  std::vector<TransitionRecord> trace;
  std::function<bool(const McmMessage&)> drop;
  // Application reaction to a notification; may queue events on the bus.
  std::function<void(Bus&, StationId, const Notification&)> app;

  double now() const { return static_cast<double>(step_count) * dt; }

  Station& add(StationId id) {
    auto& s = stations[id];
    s.state = make_state(id);
    return s;
  }
  CoordinationState& state(StationId id) { return stations.at(id).state; }
  void queue(StationId id, LocalEvent ev) { stations.at(id).events.push_back(std::move(ev)); }

  void tick() {
    const double t = now();
    std::vector<McmMessage> next;
    for (auto& [id, st] : stations) {
      StepInput in;
      in.now = t;
      for (const auto& m : in_flight) {
        if (m.header.sender != id && (m.header.target == kBroadcast || m.header.target == id)) in.inbox.push_back(m);
      }
      in.events = std::move(st.events);
      st.events.clear();
      in.ego = Kinematics{{0, 0}, 10, 0};
      const StationId self = id;
      in.planned = [self, t] { return std::optional<TimedTrajectory>(straight(0, -3.5 * self, 8, t)); };
      auto r = step(std::move(st.state), in, params);
      st.state = std::move(r.state);
      for (auto& m : r.outbox) {
        if (st.silent) continue;
        sent.push_back(m);
        if (!drop || !drop(m)) next.push_back(std::move(m));
      }
      for (auto& tr : r.trace) trace.push_back(std::move(tr));
      for (auto& n : r.notifications) notes.emplace_back(id, n);
      if (app) {
        for (const auto& n : r.notifications) app(*this, id, n);
      }
    }
    in_flight = std::move(next);
    ++step_count;
  }

  void run_until(double t_end) {
    while (now() < t_end - 1e-9) tick();
  }

  std::size_t count_sent(MessageType type, StationId from = kBroadcast) const {
    std::size_t n = 0;
    for (const auto& m : sent) {
      if (m.type() == type && (from == kBroadcast || m.header.sender == from)) ++n;
    }
    return n;
  }
};

// A cooperative application: the prescriber targets the lowest responder, the
// receiver answers verification with `accept`, and the prescriber completes its
// maneuver `actuation_s` after actuation starts.
struct SimpleApp {
  bool accept{true};
  double actuation_s{1.0};
  std::map<StationId, double> complete_at;

  void operator()(Bus& bus, StationId id, const Notification& n) {
    if (std::holds_alternative<notify::IntentionsCollected>(n)) {
      auto intents = collect_intentions(bus.state(id), bus.now(), bus.params);
      std::vector<StationId> ids;
      for (const auto& [sid, tt] : intents) ids.push_back(sid);
      bus.queue(id, event::CollisionRisk{ids});
      bus.queue(id, event::PrescribedTrajectoryReady{ids.front(), straight(0, -3.5, 7, bus.now())});
    } else if (std::holds_alternative<notify::PrescriptionReceived>(n)) {
      bus.queue(id, event::VerificationResult{accept});
    } else if (std::holds_alternative<notify::ActuationStarted>(n)) {
      if (bus.state(id).role == Role::kPrescriber) complete_at[id] = bus.now() + actuation_s;
    }
  }

  // Raises ManeuverComplete for stations whose maneuver time has come.
  void poll(Bus& bus) {
    for (auto it = complete_at.begin(); it != complete_at.end();) {
      if (bus.now() + 1e-9 >= it->second) {
        bus.queue(it->first, event::ManeuverComplete{});
        it = complete_at.erase(it);
      } else {
        ++it;
      }
    }
  }
};

inline void run_with(Bus& bus, SimpleApp& app, double t_end) {
  bus.app = [&app](Bus& b, StationId id, const Notification& n) { app(b, id, n); };
  while (bus.now() < t_end - 1e-9) {
    app.poll(bus);
    bus.tick();
  }
}

}  // namespace mcm::testing
