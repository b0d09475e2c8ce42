#pragma once

// Fixed-step simulation of a straight two-lane road. Lanes run along +x;
// lane 0 is centered on y = 0 and lane 1 one lane width to the right.
// Each vehicle hosts a protocol engine, a small application layer (the
// lane-change logic of the planner module) and a longitudinal controller.
// Messages travel over a shared channel with fixed latency and independent
// per-copy Bernoulli loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mcm/codec.hpp"
#include "mcm/geometry.hpp"
#include "mcm/planner.hpp"
#include "mcm/protocol.hpp"
#include "mcm/trajectory.hpp"

namespace mcm {

struct CarFollowingParams {
  double time_gap{1.5};   // s
  double s0{5.0};         // m, standstill net gap
  double kv{0.8};         // 1/s
  double kd{0.3};         // 1/s^2
  double max_accel{2.0};  // m/s^2
  double max_decel{5.0};  // m/s^2, positive magnitude
};

// Constant-time-gap law on the net (bumper to bumper) gap.
inline double car_following_accel(double gap, double v, double v_lead, const CarFollowingParams& p) {
  const double a = p.kv * (v_lead - v) + p.kd * (gap - (p.s0 + v * p.time_gap));
  return std::clamp(a, -p.max_decel, p.max_accel);
}

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

struct LaneChange {
  double start_time{0.0};
  double duration{3.0};
  int from_lane{0};
  int to_lane{1};
  double from_y{0.0};
  double to_y{0.0};

  double progress(double t) const { return std::clamp((t - start_time) / duration, 0.0, 1.0); }
  double lateral(double t) const { return from_y + (to_y - from_y) * smoothstep(progress(t)); }
  bool done(double t) const { return t + 1e-9 >= start_time + duration; }
};

enum class ControllerMode { kCruisePlanned, kPrescriptionFollowing, kCarFollowing, kEmergencyStop, kLaneChanging };

inline const char* to_string(ControllerMode m) {
  switch (m) {
    case ControllerMode::kCruisePlanned: return "CruisePlanned";
    case ControllerMode::kPrescriptionFollowing: return "PrescriptionFollowing";
    case ControllerMode::kCarFollowing: return "CarFollowing";
    case ControllerMode::kEmergencyStop: return "EmergencyStop";
    case ControllerMode::kLaneChanging: return "LaneChanging";
  }
  return "?";
}

enum class ScenarioKind { kLaneChange2, kLaneChange4 };

inline const char* to_string(ScenarioKind k) {
  return k == ScenarioKind::kLaneChange2 ? "lane_change_2" : "lane_change_4";
}

struct ScenarioConfig {
  ScenarioKind scenario{ScenarioKind::kLaneChange2};
  double speed_kmh{30.0};
  double loss_rate{0.0};
  double latency_s{0.02};
  std::uint64_t seed{1};
  bool mcm_enabled{true};
  bool stream_mcm{false};
  bool trace{false};
  bool record_samples{false};

  double dt_sim{0.01};
  double lane_width{3.5};
  double road_length{300.0};
  double vehicle_length{4.5};
  double receiver_start_x{35.0};
  double goal_distance{260.0};
  double initial_gap{3.0};  // prescriber ahead of the receiver, center to center
  double lead_gap{30.0};    // lane_change_4: A ahead of the prescriber
  double lane_change_duration{3.0};
  double lane_change_desired_at{1.0};
  double standalone_delay{1.0};  // stand-alone lane change starts this long after the wish
  double resume_gap{15.0};
  double cruise_gain{1.0};
  double gap_margin{0.25};     // lane change starts once the observed gap is within this of D
  double onset_fallback{5.0};  // ... or this long after the planned end of the slow phase
  double max_time{120.0};
  double point_spacing{1.0};
  std::size_t thinning{5};

  CarFollowingParams car_following;
  FeedbackParams feedback;
  VerificationLimits limits;
  ProtocolParams protocol;
  PrescriptionParams prescription;
  bool dt1_set{false};  // otherwise dt1 = t_timeout

  // Test hook: drop everything this station transmits from silence_at on.
  std::optional<StationId> silence_station;
  double silence_at{0.0};

  double cruise_speed() const { return speed_kmh / 3.6; }
  double dt1() const { return dt1_set ? prescription.dt1 : protocol.t_timeout; }
  PrescriptionParams effective_prescription() const {
    PrescriptionParams p = prescription;
    p.dt1 = dt1();
    return p;
  }
};

inline constexpr StationId kPrescriberId = 1;

struct HeardCam {
  Cam cam;
  double generated_at{0.0};
};

struct PlanRecord {
  double time{0.0};
  StationId target{0};
  double gap{0.0};       // d, center to center along the heading
  double total_gap{0.0}; // D = d + d0
  double slow_end{0.0};  // planned end of the reduced-speed window
};

enum class PrescriberOutcome { kPending, kFinished, kNoConflict, kNoResponders, kAborted };

struct VehicleState {
  explicit VehicleState(SpeedTrajectory plan) : planned(std::move(plan)) {}

  StationId station_id{0};
  Vec2 position;
  double speed{0.0};
  Vec2 heading{1.0, 0.0};
  int lane_id{0};
  ControllerMode controller{ControllerMode::kCruisePlanned};
  double lane_change_progress{0.0};
  SpeedTrajectory planned;
  CoordinationState coordination;

  // application layer
  double cruise_speed{0.0};
  bool wants_lane_change{false};
  bool lane_change_requested{false};
  int target_lane{1};
  std::optional<LaneChange> lane_change;
  bool lane_change_done{false};
  std::optional<double> standalone_onset;
  std::optional<PlanRecord> plan;
  bool awaiting_gap{false};
  PrescriberOutcome outcome{PrescriberOutcome::kPending};
  std::optional<AbortCause> abort_cause;
  bool last_plan_conflict_free{false};

  std::optional<PrescriptionLoader> loader;
  std::optional<double> receiver_complete_at;

  std::optional<StationId> emergency_intruder;
  std::set<StationId> intrusions_seen;
  bool car_following_active{false};

  std::vector<LocalEvent> pending_events;
  std::map<StationId, HeardCam> cams;
};

struct InFlight {
  std::int64_t deliver_step{0};
  StationId recipient{0};
  McmMessage message;
};

struct ChannelState {
  double loss_rate{0.0};
  double latency{0.02};
  std::deque<InFlight> in_flight;  // ordered by deliver_step, ties in insertion order
  std::uint64_t copies{0};
  std::uint64_t delivered{0};
  std::uint64_t dropped{0};
  std::uint64_t suppressed{0};  // transmissions swallowed by a silenced station
};

struct Transmission {
  double time{0.0};
  StationId sender{0};
  StationId target{0};
  MessageType type{MessageType::kCam};
  SeqNum seq{0};
  std::size_t bytes{0};
  bool streamed{false};  // stream_mcm filler, counted but never delivered
};

struct OnsetRecord {
  double time{0.0};
  StationId station{0};
  StationId follower{0};
  double gap{0.0};  // center to center, true positions
  bool coordinated{false};
  std::optional<double> total_gap;  // D when coordinated
};

struct EmergencyRecord {
  double time{0.0};
  StationId station{0};
  StationId intruder{0};
  double net_gap{0.0};
};

struct RevertRecord {
  double time{0.0};
  StationId station{0};
  AbortCause cause{AbortCause::kTimeout};
};

struct SpeedSample {
  double time{0.0};
  StationId station{0};
  Vec2 position;
  double speed{0.0};
  ControllerMode mode{ControllerMode::kCruisePlanned};
};

struct WorldLog {
  std::vector<Transmission> transmissions;
  std::vector<TransitionRecord> transitions;
  std::vector<OnsetRecord> onsets;
  std::vector<EmergencyRecord> emergency_stops;
  std::vector<RevertRecord> reverts;
  std::vector<std::pair<double, StationId>> finishes;
  std::vector<PlanRecord> plans;
  std::vector<SpeedSample> samples;
  std::map<StationId, double> min_speed;
  std::map<StationId, double> max_speed;
  double min_gap{std::numeric_limits<double>::infinity()};  // focus receiver to its in-lane leader, net
  std::optional<double> arrival_time;  // goal reached, measured from lane_change_desired_at
};

struct WorldState {
  ScenarioConfig config;
  LaneGeometry lanes;
  std::int64_t step_count{0};
  std::vector<VehicleState> vehicles;
  ChannelState channel;
  std::mt19937_64 rng;
  StationId focus{0};  // the receiver whose arrival time is measured
  double goal_x{0.0};
  WorldLog log;
  bool finished{false};

  double clock() const { return static_cast<double>(step_count) * config.dt_sim; }
  double dt() const { return config.dt_sim; }

  VehicleState* find(StationId id) {
    for (auto& v : vehicles) {
      if (v.station_id == id) return &v;
    }
    return nullptr;
  }
  const VehicleState* find(StationId id) const {
    for (const auto& v : vehicles) {
      if (v.station_id == id) return &v;
    }
    return nullptr;
  }
};

namespace sim {

inline constexpr double kEps = 1e-9;

inline double lane_center(const WorldState& w, int lane) { return -w.config.lane_width * lane; }

// Lane by lateral position alone (the road may be left at the far end).
inline int lane_index(const WorldState& w, double y) {
  const double half = 0.5 * w.config.lane_width;
  for (const auto& l : w.lanes.lanes) {
    if (std::abs(y - lane_center(w, l.id)) <= half + kEps) return l.id;
  }
  return -1;
}

inline SpeedTrajectory straight_plan(double x0, double y, double x_end, double spacing, double speed) {
  std::vector<SpeedPoint> pts;
  pts.push_back({{x0, y}, speed});
  for (double x = std::floor(x0 / spacing + 1.0) * spacing; x < x_end + kEps; x += spacing) {
    if (x - pts.back().position.x > 1e-6) pts.push_back({{x, y}, speed});
  }
  if (pts.size() < 2) pts.push_back({{x0 + spacing, y}, speed});
  return SpeedTrajectory(std::move(pts));
}

inline VehicleState make_vehicle(const WorldState& w, StationId id, double x, int lane) {
  const auto& c = w.config;
  const double y = lane_center(w, lane);
  VehicleState v(straight_plan(x, y, c.road_length, c.point_spacing, c.cruise_speed()));
  v.station_id = id;
  v.position = {x, y};
  v.speed = c.cruise_speed();
  v.lane_id = lane;
  v.coordination = make_state(id);
  v.cruise_speed = c.cruise_speed();
  return v;
}

// Converted and thinned planned trajectory: the Intention payload.
inline std::optional<TimedTrajectory> planned_timed(const WorldState& w, const VehicleState& v, double now) {
  try {
    return thin_trajectory(convert_trajectory(v.planned, v.position, now), w.config.thinning);
  } catch (const TrajectoryError&) {
    return std::nullopt;
  }
}

// Prescriber's own intended path: straight ahead at cruise speed with the
// lane change starting at `onset`, sampled every 0.1 s.
inline TimedTrajectory lane_change_plan(const WorldState& w, const VehicleState& v, double now, double onset) {
  const auto& c = w.config;
  LaneChange lc{onset, c.lane_change_duration, v.lane_id, v.target_lane, v.position.y, lane_center(w, v.target_lane)};
  const double horizon = std::max(onset - now, 0.0) + c.lane_change_duration + 10.0;
  std::vector<TimedPoint> pts;
  for (int k = 0; k * 0.1 <= horizon + kEps; ++k) {
    const double t = now + k * 0.1;
    pts.push_back({{v.position.x + v.speed * (t - now), lc.lateral(t)}, t});
  }
  return TimedTrajectory(std::move(pts));
}

// Where `id` is believed to be at `now`, extrapolated from its last CAM.
inline std::optional<std::pair<Vec2, double>> estimate_from_cam(const VehicleState& self, StationId id, double now) {
  auto it = self.cams.find(id);
  if (it == self.cams.end()) return std::nullopt;
  const Cam& cam = it->second.cam;
  const double age = now - it->second.generated_at;
  const Vec2 dir{std::cos(cam.heading), std::sin(cam.heading)};
  return std::make_pair(cam.position + (cam.speed * age) * dir, cam.speed);
}

inline void start_lane_change(WorldState& w, VehicleState& v, double now, bool coordinated) {
  const auto& c = w.config;
  v.lane_change = LaneChange{now, c.lane_change_duration, v.lane_id, v.target_lane, v.position.y,
                             lane_center(w, v.target_lane)};
  v.standalone_onset.reset();
  v.awaiting_gap = false;
  OnsetRecord rec;
  rec.time = now;
  rec.station = v.station_id;
  rec.follower = w.focus;
  if (coordinated && v.plan) {
    rec.follower = v.plan->target;
    rec.total_gap = v.plan->total_gap;
    rec.coordinated = true;
  }
  if (const VehicleState* f = w.find(rec.follower)) rec.gap = dot(v.position - f->position, v.heading);
  w.log.onsets.push_back(rec);
}

inline void schedule_standalone(WorldState& w, VehicleState& v, double now) {
  if (v.lane_change || v.lane_change_done) return;
  v.awaiting_gap = false;
  v.standalone_onset = std::max(now, w.config.lane_change_desired_at + w.config.standalone_delay);
}

inline void plan_prescription(WorldState& w, VehicleState& p, double now) {
  const auto& c = w.config;
  std::vector<std::pair<StationId, TimedTrajectory>> intents;
  try {
    intents = collect_intentions(p.coordination, now, c.protocol);
  } catch (const ProtocolError&) {
    p.pending_events.push_back(event::ScenarioAbort{});
    return;
  }
  const double onset = std::max(now, c.lane_change_desired_at + c.standalone_delay);
  const TimedTrajectory own = lane_change_plan(w, p, now, onset);
  const PrescriptionParams params = c.effective_prescription();

  std::vector<StationId> conflicts;
  std::vector<Candidate> candidates;
  for (const auto& [id, tt] : intents) {
    try {
      if (!detect_collision(own, tt, params.collision_threshold).colliding) continue;
    } catch (const TrajectoryError&) {
      continue;
    }
    conflicts.push_back(id);
    candidates.push_back({id, tt, position_at_clamped(tt, now)});
  }
  if (conflicts.empty()) {
    p.last_plan_conflict_free = true;
    p.pending_events.push_back(event::CollisionRisk{});
    return;
  }
  const auto in_lane = filter_in_lane(std::move(candidates), w.lanes, p.target_lane);
  if (in_lane.empty()) {
    p.last_plan_conflict_free = true;
    p.pending_events.push_back(event::CollisionRisk{});
    return;
  }
  std::vector<std::pair<StationId, Vec2>> positions;
  for (const auto& cand : in_lane) positions.emplace_back(cand.station, cand.position);
  const StationId leader = find_leading(positions, p.heading);
  const auto& leader_tt =
      std::find_if(in_lane.begin(), in_lane.end(), [&](const Candidate& x) { return x.station == leader; })->trajectory;

  Vec2 leader_pos = position_at_clamped(leader_tt, now);
  double leader_speed = SpeedSchedule(leader_tt).target_at(now);
  if (auto est = estimate_from_cam(p, leader, now)) {
    leader_pos = est->first;
    leader_speed = est->second;
  }
  const double d = dot(p.position - leader_pos, p.heading);
  try {
    TimedTrajectory tt = generate_prescribed(leader_tt, leader_speed, d, params, now);
    const auto tl = prescription_timeline(params, d, now);
    p.plan = PlanRecord{now, leader, d, tl.total_gap, tl.decel_end};
    w.log.plans.push_back(*p.plan);
    p.pending_events.push_back(event::CollisionRisk{conflicts});
    p.pending_events.push_back(event::PrescribedTrajectoryReady{leader, std::move(tt)});
  } catch (const PlannerError&) {
    p.pending_events.push_back(event::ScenarioAbort{});
  }
}

inline void on_notification(WorldState& w, VehicleState& v, const Notification& n, double now) {
  const auto& c = w.config;
  std::visit(
      [&](const auto& note) {
        using T = std::decay_t<decltype(note)>;
        if constexpr (std::is_same_v<T, notify::IntentionsCollected>) {
          plan_prescription(w, v, now);
        } else if constexpr (std::is_same_v<T, notify::ProceedAlone>) {
          v.outcome = v.last_plan_conflict_free ? PrescriberOutcome::kNoConflict : PrescriberOutcome::kNoResponders;
          schedule_standalone(w, v, now);
        } else if constexpr (std::is_same_v<T, notify::PrescriptionReceived>) {
          const auto own = planned_timed(w, v, now);
          const bool ok = own && verify_prescription(note.trajectory, c.limits, *own);
          v.pending_events.push_back(event::VerificationResult{ok});
        } else if constexpr (std::is_same_v<T, notify::ActuationStarted>) {
          if (v.wants_lane_change) {
            v.awaiting_gap = !v.lane_change && !v.lane_change_done;
          } else {
            v.loader.emplace(load_prescription(note.prescription, c.feedback, v.cruise_speed));
            v.receiver_complete_at =
                v.loader->schedule().last_change_time() + c.onset_fallback + c.lane_change_duration + 1.0;
          }
        } else if constexpr (std::is_same_v<T, notify::Aborted>) {
          w.log.reverts.push_back({now, v.station_id, note.cause});
          if (v.wants_lane_change) {
            v.outcome = PrescriberOutcome::kAborted;
            v.abort_cause = note.cause;
            schedule_standalone(w, v, now);
          } else {
            v.loader.reset();
            v.receiver_complete_at.reset();
          }
        } else if constexpr (std::is_same_v<T, notify::Finished>) {
          w.log.finishes.emplace_back(now, v.station_id);
          if (v.wants_lane_change) {
            v.outcome = PrescriberOutcome::kFinished;
          } else {
            v.loader.reset();
            v.receiver_complete_at.reset();
          }
        }
      },
      n);
}

inline bool silenced(const WorldState& w, StationId sender, double now) {
  return w.config.silence_station && *w.config.silence_station == sender && now + kEps >= w.config.silence_at;
}

inline void transmit(WorldState& w, const McmMessage& m, double now, bool streamed) {
  const StationId sender = m.header.sender;
  if (silenced(w, sender, now)) {
    ++w.channel.suppressed;
    return;
  }
  w.log.transmissions.push_back(
      {now, sender, m.header.target, m.type(), m.header.seq, encoded_size(m), streamed});
  if (streamed) return;
  const auto latency_steps = static_cast<std::int64_t>(std::llround(w.channel.latency / w.config.dt_sim));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& v : w.vehicles) {
    if (v.station_id == sender) continue;
    if (m.header.target != kBroadcast && m.header.target != v.station_id) continue;
    ++w.channel.copies;
    if (w.channel.loss_rate > 0.0 && u(w.rng) < w.channel.loss_rate) {
      ++w.channel.dropped;
      continue;
    }
    w.channel.in_flight.push_back({w.step_count + latency_steps, v.station_id, m});
  }
}

// Nearest vehicle ahead in the same lane and its net gap.
inline std::optional<std::pair<std::size_t, double>> leader_of(const WorldState& w, std::size_t i) {
  const auto& me = w.vehicles[i];
  const int lane = lane_index(w, me.position.y);
  std::optional<std::pair<std::size_t, double>> best;
  for (std::size_t j = 0; j < w.vehicles.size(); ++j) {
    if (j == i) continue;
    const auto& o = w.vehicles[j];
    if (lane_index(w, o.position.y) != lane) continue;
    const double ahead = dot(o.position - me.position, me.heading);
    if (ahead <= 0.0) continue;
    if (!best || ahead - w.config.vehicle_length < best->second) best = {j, ahead - w.config.vehicle_length};
  }
  return best;
}

// Application monitors evaluated at the start of a tick.
inline void run_monitors(WorldState& w, double now) {
  const auto& c = w.config;
  for (auto& v : w.vehicles) {
    if (v.wants_lane_change) {
      if (!v.lane_change_requested && now + kEps >= c.lane_change_desired_at) {
        v.lane_change_requested = true;
        if (c.mcm_enabled) {
          v.pending_events.push_back(event::LaneChangeDesired{});
        } else {
          schedule_standalone(w, v, now);
        }
      }
      if (v.standalone_onset && !v.lane_change && now + kEps >= *v.standalone_onset) {
        start_lane_change(w, v, now, false);
      }
      if (v.awaiting_gap && v.plan && !v.lane_change) {
        auto est = estimate_from_cam(v, v.plan->target, now);
        const double observed = est ? dot(v.position - est->first, v.heading) : -1e9;
        if (observed >= v.plan->total_gap - c.gap_margin || now + kEps >= v.plan->slow_end + c.onset_fallback) {
          start_lane_change(w, v, now, true);
        }
      }
      if (v.lane_change && !v.lane_change_done && v.lane_change->done(now)) {
        v.lane_change_done = true;
        v.lane_id = v.lane_change->to_lane;
        v.lane_change.reset();
        if (v.coordination.phase == Phase::kActuating) v.pending_events.push_back(event::ManeuverComplete{});
      }
    } else if (v.receiver_complete_at && now + kEps >= *v.receiver_complete_at &&
               v.coordination.phase == Phase::kActuating) {
      // Fin never came; the maneuver window is long over.
      v.receiver_complete_at.reset();
      v.pending_events.push_back(event::ManeuverComplete{});
    }
  }

  // Intrusion perception and emergency stops.
  for (auto& v : w.vehicles) {
    const int lane = lane_index(w, v.position.y);
    if (v.emergency_intruder) {
      const VehicleState* in = w.find(*v.emergency_intruder);
      const double net = dot(in->position - v.position, v.heading) - c.vehicle_length;
      if (v.speed <= 0.0 && net >= c.resume_gap) v.emergency_intruder.reset();
      continue;
    }
    if (v.lane_change) continue;
    for (const auto& o : w.vehicles) {
      if (o.station_id == v.station_id || !o.lane_change || o.lane_change->to_lane != lane) continue;
      if (v.intrusions_seen.count(o.station_id)) continue;
      if (lane_index(w, o.position.y) != lane) continue;  // not across the boundary yet
      const double ahead = dot(o.position - v.position, v.heading);
      if (ahead <= 0.0) continue;
      v.intrusions_seen.insert(o.station_id);
      const double net = ahead - c.vehicle_length;
      if (net < c.resume_gap) {
        v.emergency_intruder = o.station_id;
        w.log.emergency_stops.push_back({now, v.station_id, o.station_id, net});
      }
    }
  }

  if (const VehicleState* f = w.find(w.focus); f && !w.log.arrival_time && f->position.x + kEps >= w.goal_x) {
    w.log.arrival_time = now - c.lane_change_desired_at;
    w.finished = true;
  }
}

inline void update_mode(VehicleState& v) {
  if (v.emergency_intruder) {
    v.controller = ControllerMode::kEmergencyStop;
  } else if (v.lane_change) {
    v.controller = ControllerMode::kLaneChanging;
  } else if (v.loader) {
    v.controller = ControllerMode::kPrescriptionFollowing;
  } else if (v.car_following_active) {
    v.controller = ControllerMode::kCarFollowing;
  } else {
    v.controller = ControllerMode::kCruisePlanned;
  }
}

inline void integrate(WorldState& w, double now) {
  const auto& c = w.config;
  const double dt = c.dt_sim;
  std::vector<double> accel(w.vehicles.size(), 0.0);
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
    auto& v = w.vehicles[i];
    double a = 0.0;
    if (v.emergency_intruder) {
      a = -c.car_following.max_decel;
    } else {
      if (v.loader) {
        a = v.loader->command(now, v.speed);
      } else {
        a = std::clamp(c.cruise_gain * (v.cruise_speed - v.speed), -c.car_following.max_decel,
                       c.car_following.max_accel);
      }
      v.car_following_active = false;
      if (auto lead = leader_of(w, i)) {
        const auto& l = w.vehicles[lead->first];
        const double cf = car_following_accel(lead->second, v.speed, l.speed, c.car_following);
        if (cf < a) {
          a = cf;
          v.car_following_active = true;
        }
      }
    }
    accel[i] = a;
    if (v.station_id == w.focus) {
      if (auto lead = leader_of(w, i)) w.log.min_gap = std::min(w.log.min_gap, lead->second);
    }
  }
  const double t_next = now + dt;
  for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
    auto& v = w.vehicles[i];
    v.speed = std::max(0.0, v.speed + accel[i] * dt);
    v.position += (v.speed * dt) * v.heading;
    if (v.lane_change) {
      v.position.y = v.lane_change->lateral(t_next);
      v.lane_change_progress = v.lane_change->progress(t_next);
    } else {
      v.lane_change_progress = v.lane_change_done ? 1.0 : 0.0;
    }
    update_mode(v);
    auto [mn, fresh] = w.log.min_speed.try_emplace(v.station_id, v.speed);
    if (!fresh) mn->second = std::min(mn->second, v.speed);
    auto [mx, fresh_max] = w.log.max_speed.try_emplace(v.station_id, v.speed);
    if (!fresh_max) mx->second = std::max(mx->second, v.speed);
  }
}

}  // namespace sim

// Lateral interpolation for one step of a lane change; longitudinal state untouched.
inline VehicleState execute_lane_change(VehicleState v, const LaneChange& lc, double t) {
  v.position.y = lc.lateral(t);
  v.lane_change_progress = lc.progress(t);
  return v;
}

// Baseline reaction of `receiver` to `intruder`: the controller mode it
// should be in after perceiving (or not) the intruder.
inline ControllerMode baseline_receiver_behavior(const VehicleState& receiver, const VehicleState& intruder,
                                                 double lane_width, double vehicle_length, double resume_gap) {
  const double receiver_lane_y = receiver.position.y;
  const bool crossed = std::abs(intruder.position.y - receiver_lane_y) <= 0.5 * lane_width + sim::kEps;
  const double net = dot(intruder.position - receiver.position, receiver.heading) - vehicle_length;
  if (receiver.controller == ControllerMode::kEmergencyStop) {
    return receiver.speed <= 0.0 && net >= resume_gap ? ControllerMode::kCruisePlanned
                                                      : ControllerMode::kEmergencyStop;
  }
  if (crossed && net > -vehicle_length && net < resume_gap) return ControllerMode::kEmergencyStop;
  return receiver.controller;
}

inline WorldState make_world(const ScenarioConfig& config) {
  WorldState w;
  w.config = config;
  const double L = config.road_length;
  w.lanes.lanes = {Lane{0, {0.0, 0.0}, {L, 0.0}, config.lane_width},
                   Lane{1, {0.0, -config.lane_width}, {L, -config.lane_width}, config.lane_width}};
  w.channel.loss_rate = config.loss_rate;
  w.channel.latency = config.latency_s;
  w.rng.seed(config.seed);

  const double rx = config.receiver_start_x;
  const double px = rx + config.initial_gap;
  VehicleState p = sim::make_vehicle(w, kPrescriberId, px, 0);
  p.wants_lane_change = true;
  p.target_lane = 1;
  w.vehicles.push_back(std::move(p));
  if (config.scenario == ScenarioKind::kLaneChange2) {
    w.vehicles.push_back(sim::make_vehicle(w, 2, rx, 1));
    w.focus = 2;
  } else {
    const double follow = config.vehicle_length + config.car_following.s0 +
                          config.cruise_speed() * config.car_following.time_gap;
    w.vehicles.push_back(sim::make_vehicle(w, 2, px + config.lead_gap, 1));  // A
    w.vehicles.push_back(sim::make_vehicle(w, 3, rx, 1));                    // B
    w.vehicles.push_back(sim::make_vehicle(w, 4, rx - follow, 1));           // C
    w.focus = 3;
  }
  w.goal_x = rx + config.goal_distance;
  return w;
}

// One dt_sim tick: deliveries, application monitors, protocol steps,
// transmissions, then control and kinematics.
inline void advance(WorldState& w) {
  const auto& c = w.config;
  const double now = w.clock();
  const std::size_t n = w.vehicles.size();

  std::vector<std::vector<McmMessage>> inbox(n);
  while (!w.channel.in_flight.empty() && w.channel.in_flight.front().deliver_step <= w.step_count) {
    InFlight f = std::move(w.channel.in_flight.front());
    w.channel.in_flight.pop_front();
    for (std::size_t i = 0; i < n; ++i) {
      if (w.vehicles[i].station_id == f.recipient) {
        ++w.channel.delivered;
        if (const Cam* cam = f.message.get_if<Cam>()) {
          w.vehicles[i].cams[f.message.header.sender] = {*cam,
                                                         static_cast<double>(f.message.header.generation_time_ms) /
                                                             1000.0};
        }
        inbox[i].push_back(std::move(f.message));
        break;
      }
    }
  }

  sim::run_monitors(w, now);

  std::vector<std::vector<McmMessage>> outbox(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = w.vehicles[i];
    StepInput in;
    in.now = now;
    in.inbox = std::move(inbox[i]);
    in.events = std::move(v.pending_events);
    v.pending_events.clear();
    in.ego = Kinematics{v.position, v.speed, std::atan2(v.heading.y, v.heading.x)};
    in.planned = [&w, &v, now] { return sim::planned_timed(w, v, now); };
    StepResult r = step(std::move(v.coordination), in, c.protocol);
    v.coordination = std::move(r.state);
    if (c.trace) w.log.transitions.insert(w.log.transitions.end(), r.trace.begin(), r.trace.end());
    for (const auto& note : r.notifications) sim::on_notification(w, v, note, now);
    outbox[i] = std::move(r.outbox);
  }
  for (const auto& box : outbox) {
    for (const auto& m : box) sim::transmit(w, m, now, false);
  }

  const auto period = static_cast<std::int64_t>(std::llround(1.0 / (c.protocol.cam_frequency * c.dt_sim)));
  const bool frame = period > 0 && w.step_count % period == 0;
  if (c.stream_mcm && frame) {
    for (const auto& v : w.vehicles) {
      if (auto tt = sim::planned_timed(w, v, now)) {
        McmMessage m{.header = {.sender = v.station_id,
                                .target = kBroadcast,
                                .generation_time_ms = detail::to_ms(now)},
                     .payload = Intention{std::move(*tt)}};
        sim::transmit(w, m, now, true);
      }
    }
  }
  if (c.record_samples && frame) {
    for (const auto& v : w.vehicles) w.log.samples.push_back({now, v.station_id, v.position, v.speed, v.controller});
  }

  sim::integrate(w, now);
  ++w.step_count;
  if (w.clock() > c.max_time + sim::kEps) w.finished = true;
}

inline WorldState step_world(WorldState w) {
  advance(w);
  return w;
}

inline void run_to_end(WorldState& w) {
  while (!w.finished) advance(w);
}

}  // namespace mcm
