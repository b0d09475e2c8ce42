#pragma once

// Per-vehicle state machine for maneuver coordination. A vehicle is either
// idle, the prescriber of one scenario, or the receiver in one scenario.
// `step` is a pure function: the caller owns the state value and feeds it
// back each tick together with the messages and local events of that tick.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mcm/codec.hpp"
#include "mcm/trajectory.hpp"

namespace mcm {

struct ProtocolParams {
  double t_timeout{2.0};             // s, retransmission window of reliable sends
  double dt_resend{0.1};             // s, interval between retransmissions
  double cam_frequency{10.0};        // Hz, also the Advertisement rate
  double advertising_duration{1.0};  // s
  double cam_liveness_window{1.0};   // s
  int max_prescription_attempts{3};
  bool send_cams{true};

  // Retransmissions after the initial send.
  int max_resends() const { return static_cast<int>(std::floor(t_timeout / dt_resend + 1e-9)); }
  int max_attempts() const { return 1 + max_resends(); }
  // Time after first transmission at which an unacknowledged send fails.
  double send_expiry() const { return static_cast<double>(max_attempts()) * dt_resend; }
  // Longest a prescriber waits for an Acceptance after sending a Prescription.
  double negotiation_timeout() const { return 2.0 * (t_timeout + dt_resend); }
  // Longest a receiver waits for a Prescription after answering an Advertisement.
  double prescription_wait() const { return advertising_duration + negotiation_timeout(); }
};

enum class Role { kIdle, kPrescriber, kReceiver };

enum class Phase {
  kIdle,
  // prescriber
  kAdvertising,
  kPrescribing,
  kAwaitingAcceptance,
  // receiver
  kIntentionSent,
  kAwaitingPrescription,
  kVerifying,
  // both
  kActuating,
  kDone,
};

inline const char* to_string(Role r) {
  switch (r) {
    case Role::kIdle: return "Idle";
    case Role::kPrescriber: return "Prescriber";
    case Role::kReceiver: return "Receiver";
  }
  return "?";
}

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::kIdle: return "Idle";
    case Phase::kAdvertising: return "Advertising";
    case Phase::kPrescribing: return "Prescribing";
    case Phase::kAwaitingAcceptance: return "AwaitingAcceptance";
    case Phase::kIntentionSent: return "IntentionSent";
    case Phase::kAwaitingPrescription: return "AwaitingPrescription";
    case Phase::kVerifying: return "Verifying";
    case Phase::kActuating: return "Actuating";
    case Phase::kDone: return "Done";
  }
  return "?";
}

struct ReliableSend {
  McmMessage message;
  double first_sent{0.0};
  double last_sent{0.0};
  double resend_interval{0.1};
  double timeout{2.0};
  int transmissions{1};
};

struct IntentionRecord {
  StationId station{0};
  SeqNum seq{0};
  TimedTrajectory trajectory;
  double received_at{0.0};
};

struct Kinematics {
  Vec2 position;
  double speed{0.0};
  double heading{0.0};
};

// Local events raised by the application layer.
namespace event {
struct LaneChangeDesired {};
struct CollisionRisk {
  std::vector<StationId> targets;  // empty: no conflict with any responder
};
struct PrescribedTrajectoryReady {
  StationId target{0};
  TimedTrajectory trajectory;
};
struct VerificationResult {
  bool ok{false};
};
struct ManeuverComplete {};
struct ScenarioAbort {};
}  // namespace event

using LocalEvent = std::variant<event::LaneChangeDesired, event::CollisionRisk, event::PrescribedTrajectoryReady,
                                event::VerificationResult, event::ManeuverComplete, event::ScenarioAbort>;

enum class AbortCause { kCommLoss, kRefused, kTimeout, kScenarioAborted, kNotTarget };

inline const char* to_string(AbortCause c) {
  switch (c) {
    case AbortCause::kCommLoss: return "CommLoss";
    case AbortCause::kRefused: return "Refused";
    case AbortCause::kTimeout: return "Timeout";
    case AbortCause::kScenarioAborted: return "ScenarioAborted";
    case AbortCause::kNotTarget: return "NotTarget";
  }
  return "?";
}

// Upcalls to the application layer.
namespace notify {
struct IntentionsCollected {};  // prescriber: plan and answer with CollisionRisk/PrescribedTrajectoryReady
struct ProceedAlone {};         // prescriber: scenario ended without a coordinated receiver
struct PrescriptionReceived {
  StationId from{0};
  TimedTrajectory trajectory;
};
struct ActuationStarted {
  StationId peer{0};
  TimedTrajectory prescription;
};
struct Aborted {
  AbortCause cause{AbortCause::kScenarioAborted};
};
struct Finished {};
}  // namespace notify

using Notification = std::variant<notify::IntentionsCollected, notify::ProceedAlone, notify::PrescriptionReceived,
                                  notify::ActuationStarted, notify::Aborted, notify::Finished>;

struct CoordinationState {
  StationId self{0};
  Role role{Role::kIdle};
  Phase phase{Phase::kIdle};
  double phase_entered_at{0.0};

  // Receiver: the prescriber. Prescriber: the receiver being prescribed.
  StationId peer{kBroadcast};
  std::vector<IntentionRecord> intentions;  // prescriber only
  std::vector<StationId> conflicts;         // prescriber: last CollisionRisk targets
  std::optional<TimedTrajectory> prescription;
  bool prescription_accepted{false};
  std::optional<SeqNum> prescription_seq;  // receiver: seq of the last Prescription considered
  int prescription_attempts{0};

  std::vector<ReliableSend> pending;
  std::map<StationId, double> last_cam_heard;
  // Advertiser -> generation time (ms) of the first Advertisement of its current session.
  std::map<StationId, std::uint64_t> sessions;

  int adverts_sent{0};
  std::optional<double> cam_origin;
  std::int64_t cams_sent{0};
  std::array<SeqNum, 9> next_seq{};

  bool coordinating() const { return phase != Phase::kIdle && phase != Phase::kDone; }
};

struct StepInput {
  double now{0.0};
  std::vector<McmMessage> inbox;
  std::vector<LocalEvent> events;
  std::optional<Kinematics> ego;  // needed for CAM generation
  // Current planned trajectory; consulted only when an Intention must be sent.
  std::function<std::optional<TimedTrajectory>()> planned;
};

struct TransitionRecord {
  double time{0.0};
  StationId station{0};
  Phase old_phase{Phase::kIdle};
  std::string cause;
  Phase new_phase{Phase::kIdle};
  std::vector<MessageType> sent;
};

struct StepResult {
  CoordinationState state;
  std::vector<McmMessage> outbox;
  std::vector<Notification> notifications;
  std::vector<TransitionRecord> trace;
};

enum class ProtocolErrc { kEmptyIntentionSet, kStillAdvertising, kNotPrescriber };

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ProtocolErrc code() const noexcept { return code_; }

 private:
  ProtocolErrc code_;
};

// Closed-form probability that a reliably sent message gets through when
// each copy is lost with probability `lambda`: 1 - lambda^(t_timeout/t_resend).
inline double delivery_success_probability(double lambda, double t_timeout, double t_resend) {
  if (lambda == 0.0) return 1.0;
  return 1.0 - std::pow(lambda, t_timeout / t_resend);
}

// Same quantity counting the initial transmission: the engine makes
// 1 + floor(t_timeout/t_resend) attempts.
inline double attempt_success_probability(double lambda, double t_timeout, double t_resend) {
  const double attempts = 1.0 + std::floor(t_timeout / t_resend + 1e-9);
  return 1.0 - std::pow(lambda, attempts);
}

inline std::string format_transition(const TransitionRecord& r) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << r.time << ", " << r.station << ", " << to_string(r.old_phase) << ", " << r.cause << ", "
     << to_string(r.new_phase) << ", sent=[";
  for (std::size_t i = 0; i < r.sent.size(); ++i) os << (i ? " " : "") << to_string(r.sent[i]);
  os << ']';
  return os.str();
}

namespace detail {

inline constexpr double kTimeEps = 1e-9;

inline std::uint64_t to_ms(double t) { return static_cast<std::uint64_t>(std::llround(t * 1000.0)); }

inline AbortCause cause_of(CancelReason r) {
  switch (r) {
    case CancelReason::kRefused: return AbortCause::kRefused;
    case CancelReason::kCommLoss: return AbortCause::kCommLoss;
    case CancelReason::kNotTarget: return AbortCause::kNotTarget;
    case CancelReason::kScenarioAborted: return AbortCause::kScenarioAborted;
  }
  return AbortCause::kScenarioAborted;
}

class Machine {
 public:
  Machine(CoordinationState state, double now, const ProtocolParams& params)
      : r_{std::move(state), {}, {}, {}}, now_(now), p_(params), old_phase_(r_.state.phase) {}

  CoordinationState& s() { return r_.state; }

  void note(std::string cause) {
    if (!cause_.empty()) cause_ += ';';
    cause_ += std::move(cause);
  }

  McmMessage make(Payload payload, StationId target) {
    McmMessage m{.header = {}, .payload = std::move(payload)};
    auto& seq = s().next_seq[static_cast<std::size_t>(m.type())];
    m.header.sender = s().self;
    m.header.target = target;
    m.header.seq = seq++;
    m.header.generation_time_ms = to_ms(now_);
    return m;
  }

  void send(Payload payload, StationId target) { r_.outbox.push_back(make(std::move(payload), target)); }

  void send_reliable(Payload payload, StationId target) {
    McmMessage m = make(std::move(payload), target);
    r_.outbox.push_back(m);
    s().pending.push_back({.message = std::move(m),
                           .first_sent = now_,
                           .last_sent = now_,
                           .resend_interval = p_.dt_resend,
                           .timeout = p_.t_timeout,
                           .transmissions = 1});
  }

  void ack(const McmMessage& m) { send(Ack{m.type(), m.header.seq}, m.header.sender); }

  void enter(Phase phase) {
    if (s().phase != phase) s().phase_entered_at = now_;
    s().phase = phase;
  }

  void drop_pending(MessageType type) {
    std::erase_if(s().pending, [&](const ReliableSend& rs) { return rs.message.type() == type; });
  }

  void reset_scenario() {
    auto& st = s();
    st.peer = kBroadcast;
    st.intentions.clear();
    st.conflicts.clear();
    st.prescription.reset();
    st.prescription_accepted = false;
    st.prescription_seq.reset();
    st.prescription_attempts = 0;
    st.pending.clear();
    st.adverts_sent = 0;
  }

  void abort(AbortCause cause) {
    reset_scenario();
    s().role = Role::kIdle;
    enter(Phase::kIdle);
    r_.notifications.push_back(notify::Aborted{cause});
  }

  void finish() {
    s().pending.clear();
    enter(Phase::kDone);
    r_.notifications.push_back(notify::Finished{});
  }

  void notify(Notification n) { r_.notifications.push_back(std::move(n)); }

  bool is_responder(StationId id) const {
    return std::any_of(r_.state.intentions.begin(), r_.state.intentions.end(),
                       [&](const IntentionRecord& rec) { return rec.station == id; });
  }

  // ---- inbound ----------------------------------------------------------

  void on_message(const McmMessage& m, const StepInput& in) {
    const StationId from = m.header.sender;
    if (from == s().self) return;
    if (m.header.target != kBroadcast && m.header.target != s().self) return;
    std::visit([&](const auto& body) { handle(m, from, body, in); }, m.payload);
  }

  void handle(const McmMessage&, StationId from, const Cam&, const StepInput&) { s().last_cam_heard[from] = now_; }

  // True when this Advertisement belongs to a session already seen.
  bool repeat_session(const McmMessage& m) {
    auto& sessions = s().sessions;
    const auto window = static_cast<std::uint64_t>(std::llround(p_.advertising_duration * 1000.0));
    auto it = sessions.find(m.header.sender);
    if (it != sessions.end() && m.header.generation_time_ms >= it->second &&
        m.header.generation_time_ms - it->second <= window) {
      return true;
    }
    sessions[m.header.sender] = m.header.generation_time_ms;
    return false;
  }

  void handle(const McmMessage& m, StationId from, const Advertisement&, const StepInput& in) {
    note(std::string("rx:Advertisement<") + std::to_string(from));
    if (s().role == Role::kReceiver && s().coordinating() && from == s().peer) return;
    if (repeat_session(m)) return;
    if (s().coordinating()) {
      send(Cancel{CancelReason::kRefused}, from);
      return;
    }
    std::optional<TimedTrajectory> planned = in.planned ? in.planned() : std::nullopt;
    if (!planned) return;
    reset_scenario();
    s().role = Role::kReceiver;
    s().peer = from;
    send_reliable(Intention{std::move(*planned)}, from);
    enter(Phase::kIntentionSent);
  }

  void handle(const McmMessage& m, StationId from, const Intention& body, const StepInput&) {
    if (s().role != Role::kPrescriber || !s().coordinating()) return;
    note(std::string("rx:Intention<") + std::to_string(from));
    auto& recs = s().intentions;
    auto it = std::find_if(recs.begin(), recs.end(), [&](const IntentionRecord& r) { return r.station == from; });
    if (s().phase == Phase::kAdvertising) {
      if (it == recs.end()) {
        recs.push_back({from, m.header.seq, body.trajectory, now_});
      } else if (m.header.seq > it->seq) {
        *it = {from, m.header.seq, body.trajectory, now_};
      }
      ack(m);
    } else if (it != recs.end()) {
      ack(m);
    } else {
      send(Cancel{CancelReason::kNotTarget}, from);
    }
  }

  void handle(const McmMessage&, StationId from, const Ack& body, const StepInput&) {
    auto& pend = s().pending;
    auto it = std::find_if(pend.begin(), pend.end(), [&](const ReliableSend& rs) {
      return rs.message.type() == body.acked_type && rs.message.header.seq == body.acked_seq &&
             rs.message.header.target == from;
    });
    if (it == pend.end()) return;
    note(std::string("rx:Ack(") + to_string(body.acked_type) + ")<" + std::to_string(from));
    pend.erase(it);
    if (body.acked_type == MessageType::kIntention && s().phase == Phase::kIntentionSent) {
      enter(Phase::kAwaitingPrescription);
    }
  }

  void handle(const McmMessage& m, StationId from, const Prescription& body, const StepInput&) {
    if (s().role != Role::kReceiver || from != s().peer) return;
    note(std::string("rx:Prescription<") + std::to_string(from));
    const Phase ph = s().phase;
    const bool seen = s().prescription_seq && *s().prescription_seq == m.header.seq;
    if (ph == Phase::kIntentionSent || ph == Phase::kAwaitingPrescription) {
      ack(m);
      if (seen) return;  // retransmission of a prescription already rejected
      drop_pending(MessageType::kIntention);  // a Prescription implies our Intention arrived
      s().prescription = body.trajectory;
      s().prescription_seq = m.header.seq;
      enter(Phase::kVerifying);
      notify(notify::PrescriptionReceived{from, body.trajectory});
    } else if ((ph == Phase::kVerifying || ph == Phase::kActuating) && seen) {
      ack(m);
    }
  }

  void handle(const McmMessage& m, StationId from, const Acceptance& body, const StepInput&) {
    if (s().role != Role::kPrescriber || from != s().peer) return;
    note(std::string("rx:Acceptance<") + std::to_string(from));
    const Phase ph = s().phase;
    if (ph == Phase::kActuating || ph == Phase::kPrescribing) {
      ack(m);
      return;
    }
    if (ph != Phase::kAwaitingAcceptance) return;
    ack(m);
    drop_pending(MessageType::kPrescription);
    if (body.accepted) {
      if (body.selected_trajectory) s().prescription = body.selected_trajectory;
      s().prescription_accepted = true;
      s().last_cam_heard[from] = now_;
      enter(Phase::kActuating);
      notify(notify::ActuationStarted{from, *s().prescription});
      return;
    }
    ++s().prescription_attempts;
    if (s().prescription_attempts >= p_.max_prescription_attempts) {
      send(Cancel{CancelReason::kScenarioAborted}, from);
      abort(AbortCause::kRefused);
      return;
    }
    s().prescription.reset();
    enter(Phase::kPrescribing);
    notify(notify::IntentionsCollected{});
  }

  void handle(const McmMessage&, StationId from, const Fin&, const StepInput&) {
    if (s().role != Role::kReceiver || from != s().peer) return;
    if (s().phase != Phase::kActuating) return;
    note(std::string("rx:Fin<") + std::to_string(from));
    finish();
  }

  void handle(const McmMessage&, StationId from, const Cancel& body, const StepInput&) {
    if (!s().coordinating()) return;
    if (s().role == Role::kReceiver) {
      if (from != s().peer) return;
      note(std::string("rx:Cancel(") + to_string(body.reason) + ")<" + std::to_string(from));
      abort(cause_of(body.reason));
      return;
    }
    // prescriber
    if (s().peer != kBroadcast && from == s().peer) {
      note(std::string("rx:Cancel(") + to_string(body.reason) + ")<" + std::to_string(from));
      abort(cause_of(body.reason));
    } else if (s().peer == kBroadcast && is_responder(from)) {
      note(std::string("rx:Cancel(") + to_string(body.reason) + ")<" + std::to_string(from));
      std::erase_if(s().intentions, [&](const IntentionRecord& r) { return r.station == from; });
      if (s().intentions.empty() && s().phase == Phase::kPrescribing) {
        enter(Phase::kDone);
        notify(notify::ProceedAlone{});
      }
    }
  }

  // ---- local events -----------------------------------------------------

  void on_event(const LocalEvent& ev) {
    std::visit([&](const auto& e) { handle_event(e); }, ev);
  }

  void handle_event(const event::LaneChangeDesired&) {
    note("ev:LaneChangeDesired");
    if (s().coordinating()) return;
    reset_scenario();
    s().role = Role::kPrescriber;
    enter(Phase::kAdvertising);
  }

  void cancel_responders_except(StationId keep) {
    for (const auto& rec : s().intentions) {
      if (rec.station != keep) send(Cancel{CancelReason::kNotTarget}, rec.station);
    }
  }

  void handle_event(const event::CollisionRisk& e) {
    if (s().role != Role::kPrescriber || s().phase != Phase::kPrescribing) return;
    note("ev:CollisionRisk");
    s().conflicts = e.targets;
    if (e.targets.empty()) {
      cancel_responders_except(kBroadcast);
      enter(Phase::kDone);
      notify(notify::ProceedAlone{});
    }
  }

  void handle_event(const event::PrescribedTrajectoryReady& e) {
    if (s().role != Role::kPrescriber || s().phase != Phase::kPrescribing) return;
    if (!is_responder(e.target)) return;
    note("ev:PrescribedTrajectoryReady");
    if (s().prescription_attempts == 0) cancel_responders_except(e.target);
    s().peer = e.target;
    s().prescription = e.trajectory;
    send_reliable(Prescription{e.trajectory}, e.target);
    enter(Phase::kAwaitingAcceptance);
  }

  void handle_event(const event::VerificationResult& e) {
    if (s().role != Role::kReceiver || s().phase != Phase::kVerifying || !s().prescription) return;
    note(e.ok ? "ev:VerificationResult(ok)" : "ev:VerificationResult(reject)");
    if (e.ok) {
      send_reliable(Acceptance{true, s().prescription}, s().peer);
      s().prescription_accepted = true;
      s().last_cam_heard[s().peer] = now_;
      enter(Phase::kActuating);
      notify(notify::ActuationStarted{s().peer, *s().prescription});
    } else {
      send_reliable(Acceptance{false, std::nullopt}, s().peer);
      s().prescription.reset();
      enter(Phase::kAwaitingPrescription);
    }
  }

  void handle_event(const event::ManeuverComplete&) {
    if (s().phase != Phase::kActuating) return;
    note("ev:ManeuverComplete");
    if (s().role == Role::kPrescriber) send(Fin{}, s().peer);
    finish();
  }

  void handle_event(const event::ScenarioAbort&) {
    if (!s().coordinating()) return;
    note("ev:ScenarioAbort");
    if (s().peer != kBroadcast) {
      send(Cancel{CancelReason::kScenarioAborted}, s().peer);
    } else {
      cancel_responders_except(kBroadcast);
    }
    abort(AbortCause::kScenarioAborted);
  }

  // ---- timers -----------------------------------------------------------

  void advertising_timer() {
    if (s().role != Role::kPrescriber || s().phase != Phase::kAdvertising) return;
    const double period = 1.0 / p_.cam_frequency;
    const double due = s().phase_entered_at + s().adverts_sent * period;
    if (s().adverts_sent * period < p_.advertising_duration - kTimeEps && now_ + kTimeEps >= due) {
      send(Advertisement{}, kBroadcast);
      ++s().adverts_sent;
    }
    if (now_ + kTimeEps >= s().phase_entered_at + p_.advertising_duration) {
      note("timer:advertising-end");
      enter(Phase::kPrescribing);
      if (s().intentions.empty()) {
        enter(Phase::kDone);
        notify(notify::ProceedAlone{});
      } else {
        notify(notify::IntentionsCollected{});
      }
    }
  }

  void phase_timers() {
    const auto& st = s();
    const double in_phase = now_ - st.phase_entered_at;
    if (st.role == Role::kPrescriber && st.phase == Phase::kAwaitingAcceptance &&
        in_phase > p_.negotiation_timeout() + kTimeEps) {
      note("timer:negotiation");
      send(Cancel{CancelReason::kScenarioAborted}, st.peer);
      abort(AbortCause::kTimeout);
    } else if (st.role == Role::kReceiver && st.phase == Phase::kAwaitingPrescription &&
               in_phase > p_.prescription_wait() + kTimeEps) {
      note("timer:prescription-wait");
      abort(AbortCause::kTimeout);
    } else if ((st.phase == Phase::kPrescribing || st.phase == Phase::kVerifying) &&
               in_phase > p_.negotiation_timeout() + kTimeEps) {
      // the application never answered
      note("timer:no-decision");
      if (st.peer != kBroadcast) send(Cancel{CancelReason::kScenarioAborted}, st.peer);
      abort(AbortCause::kTimeout);
    }
  }

  void tick_reliable_sends() {
    const int max_attempts = p_.max_attempts();
    for (std::size_t i = 0; i < s().pending.size(); ++i) {
      auto& rs = s().pending[i];
      if (rs.transmissions < max_attempts) {
        if (now_ + kTimeEps >= rs.first_sent + rs.transmissions * rs.resend_interval) {
          r_.outbox.push_back(rs.message);
          rs.last_sent = now_;
          ++rs.transmissions;
        }
      } else if (now_ + kTimeEps >= rs.first_sent + max_attempts * rs.resend_interval) {
        const ReliableSend failed = rs;
        note(std::string("send-failed:") + to_string(failed.message.type()));
        if (s().role == Role::kPrescriber) {
          send(Cancel{CancelReason::kScenarioAborted}, failed.message.header.target);
        }
        abort(AbortCause::kTimeout);
        return;
      }
    }
  }

  void check_cam_liveness() {
    if (s().phase != Phase::kActuating) return;
    const StationId peer = s().peer;
    auto it = s().last_cam_heard.find(peer);
    const double last = it == s().last_cam_heard.end() ? s().phase_entered_at : it->second;
    if (now_ - last > p_.cam_liveness_window + kTimeEps) {
      note("cam-liveness");
      send(Cancel{CancelReason::kCommLoss}, peer);
      abort(AbortCause::kCommLoss);
    }
  }

  void cam_timer(const StepInput& in) {
    if (!p_.send_cams || !in.ego) return;
    auto& st = s();
    if (!st.cam_origin) st.cam_origin = now_;
    const double due = *st.cam_origin + static_cast<double>(st.cams_sent) / p_.cam_frequency;
    if (now_ + kTimeEps >= due) {
      send(Cam{in.ego->position, in.ego->speed, in.ego->heading}, kBroadcast);
      ++st.cams_sent;
    }
  }

  StepResult finish_step() {
    const bool moved = r_.state.phase != old_phase_;
    std::vector<MessageType> sent;
    for (const auto& m : r_.outbox) {
      if (m.type() != MessageType::kCam) sent.push_back(m.type());
    }
    if (moved || !sent.empty()) {
      r_.trace.push_back({now_, r_.state.self, old_phase_, cause_.empty() ? "tick" : cause_, r_.state.phase,
                          std::move(sent)});
    }
    return std::move(r_);
  }

  double now() const { return now_; }

 private:
  StepResult r_;
  double now_;
  const ProtocolParams& p_;
  Phase old_phase_;
  std::string cause_;
};

}  // namespace detail

inline CoordinationState make_state(StationId self) {
  CoordinationState s;
  s.self = self;
  return s;
}

// One protocol tick: inbound messages, then local events, then timers,
// retransmissions, liveness and the periodic CAM.
inline StepResult step(CoordinationState state, const StepInput& in, const ProtocolParams& params) {
  detail::Machine m(std::move(state), in.now, params);
  for (const auto& msg : in.inbox) m.on_message(msg, in);
  for (const auto& ev : in.events) m.on_event(ev);
  m.advertising_timer();
  m.phase_timers();
  m.tick_reliable_sends();
  m.check_cam_liveness();
  m.cam_timer(in);
  return m.finish_step();
}

// Retransmission bookkeeping on its own (also run inside `step`).
inline StepResult tick_reliable_sends(CoordinationState state, double now, const ProtocolParams& params) {
  detail::Machine m(std::move(state), now, params);
  m.tick_reliable_sends();
  return m.finish_step();
}

// Heartbeat supervision on its own (also run inside `step`).
inline StepResult check_cam_liveness(CoordinationState state, double now, const ProtocolParams& params) {
  detail::Machine m(std::move(state), now, params);
  m.check_cam_liveness();
  return m.finish_step();
}

// Intentions gathered while advertising, one per responder (highest seq),
// ordered by station ID.
inline std::vector<std::pair<StationId, TimedTrajectory>> collect_intentions(const CoordinationState& state,
                                                                             double now,
                                                                             const ProtocolParams& params) {
  if (state.role != Role::kPrescriber) throw ProtocolError(ProtocolErrc::kNotPrescriber, "not a prescriber");
  if (state.phase == Phase::kAdvertising &&
      now + detail::kTimeEps < state.phase_entered_at + params.advertising_duration) {
    throw ProtocolError(ProtocolErrc::kStillAdvertising, "advertising period has not elapsed");
  }
  if (state.intentions.empty()) throw ProtocolError(ProtocolErrc::kEmptyIntentionSet, "no receiver responded");
  std::vector<std::pair<StationId, TimedTrajectory>> out;
  out.reserve(state.intentions.size());
  for (const auto& rec : state.intentions) out.emplace_back(rec.station, rec.trajectory);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

}  // namespace mcm
