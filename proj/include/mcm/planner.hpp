#pragma once

// Lane-change application logic: which responders matter, who leads, the
// gap-opening speed profile handed to the leader, and the receiver-side
// checks and speed control for following it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcm/codec.hpp"
#include "mcm/geometry.hpp"
#include "mcm/trajectory.hpp"

namespace mcm {

enum class PlannerErrc { kUnknownLane, kTooSlow, kHorizonTooShort, kInvalidParams, kNoCandidates };

inline const char* to_string(PlannerErrc e) {
  switch (e) {
    case PlannerErrc::kUnknownLane: return "UnknownLane";
    case PlannerErrc::kTooSlow: return "TooSlow";
    case PlannerErrc::kHorizonTooShort: return "HorizonTooShort";
    case PlannerErrc::kInvalidParams: return "InvalidParams";
    case PlannerErrc::kNoCandidates: return "NoCandidates";
  }
  return "?";
}

class PlannerError : public std::runtime_error {
 public:
  PlannerError(PlannerErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  PlannerErrc code() const noexcept { return code_; }

 private:
  PlannerErrc code_;
};

// Straight lane as a rectangle around its centerline.
struct Lane {
  int id{0};
  Vec2 start;
  Vec2 end;
  double width{3.5};

  Vec2 direction() const {
    const Vec2 d = end - start;
    return (1.0 / norm(d)) * d;
  }
  double length() const { return distance(start, end); }
  // Signed lateral offset of p from the centerline (left positive).
  double lateral_offset(Vec2 p) const { return cross(direction(), p - start); }
  double longitudinal(Vec2 p) const { return dot(p - start, direction()); }

  // Boundary inclusive.
  bool contains(Vec2 p) const {
    constexpr double eps = 1e-9;
    const double s = longitudinal(p);
    return s >= -eps && s <= length() + eps && std::abs(lateral_offset(p)) <= 0.5 * width + eps;
  }
};

struct LaneGeometry {
  std::vector<Lane> lanes;

  const Lane* find(int id) const {
    for (const auto& l : lanes) {
      if (l.id == id) return &l;
    }
    return nullptr;
  }
  const Lane& at(int id) const {
    const Lane* l = find(id);
    if (l == nullptr) throw PlannerError(PlannerErrc::kUnknownLane, "lane " + std::to_string(id));
    return *l;
  }
  // Lane whose rectangle holds p; the lowest id wins on a shared boundary.
  std::optional<int> lane_of(Vec2 p) const {
    std::optional<int> best;
    for (const auto& l : lanes) {
      if (l.contains(p) && (!best || l.id < *best)) best = l.id;
    }
    return best;
  }
};

struct Candidate {
  StationId station{0};
  TimedTrajectory trajectory;
  Vec2 position;
};

inline std::vector<Candidate> filter_in_lane(std::vector<Candidate> candidates, const LaneGeometry& geometry,
                                             int target_lane_id) {
  const Lane& lane = geometry.at(target_lane_id);
  std::erase_if(candidates, [&](const Candidate& c) { return !lane.contains(c.position); });
  return candidates;
}

// The candidate furthest along `heading`. Pairwise, b is in front of a when
// heading . (b - a) > 0; the maximum of that relation is the argmax of the
// projection. Equal projections go to the lower station ID so the answer
// does not depend on input order.
inline StationId find_leading(std::span<const std::pair<StationId, Vec2>> candidates, Vec2 heading) {
  if (candidates.empty()) throw PlannerError(PlannerErrc::kNoCandidates, "no candidates");
  const auto* best = &candidates.front();
  for (const auto& c : candidates.subspan(1)) {
    const double ahead = dot(heading, c.second - best->second);
    if (ahead > 0.0 || (ahead == 0.0 && c.first < best->first)) best = &c;
  }
  return best->first;
}

struct PrescriptionParams {
  double d0{20.0};                  // m, additional gap to open
  double dv{20.0 / 3.6};            // m/s, speed reduction
  double dt1{2.0};                  // s, hold before decelerating
  double collision_threshold{5.0};  // m

  double dt2() const { return d0 / dv; }
};

inline constexpr double kMinSpeedReduction = 0.1;  // m/s

// Timing of the reduced-speed window relative to `now`.
struct PrescriptionTimeline {
  double decel_start{0.0};
  double decel_end{0.0};
  double total_gap{0.0};  // d + d0
};

inline PrescriptionTimeline prescription_timeline(const PrescriptionParams& params, double gap, double now) {
  return {now + params.dt1, now + params.dt1 + params.dt2(), gap + params.d0};
}

// Re-times the receiver's planned path: receiver_speed for dt1, then
// receiver_speed - dv for d0/dv seconds, then receiver_speed again. The path
// itself is unchanged; the receiver ends up exactly d0 behind its plan.
inline TimedTrajectory generate_prescribed(const TimedTrajectory& receiver_tt, double receiver_speed, double gap,
                                           const PrescriptionParams& params, double now) {
  (void)gap;  // the opened gap is d0 whatever the current gap; D = gap + d0
  if (!(params.dv >= kMinSpeedReduction) || !(params.d0 > 0.0) || !(params.dt1 >= 0.0)) {
    throw PlannerError(PlannerErrc::kInvalidParams, "need dv >= 0.1 m/s, d0 > 0, dt1 >= 0");
  }
  if (!(receiver_speed > params.dv)) {
    throw PlannerError(PlannerErrc::kTooSlow, "receiver cannot slow by dv without stopping");
  }
  if (now < receiver_tt.start_time() || now >= receiver_tt.end_time()) {
    throw PlannerError(PlannerErrc::kHorizonTooShort, "now is outside the receiver trajectory");
  }

  const Vec2 origin = position_at(receiver_tt, now);
  std::vector<Vec2> path{origin};
  for (const auto& p : receiver_tt.points()) {
    if (p.time > now && distance(p.position, path.back()) > 1e-9) path.push_back(p.position);
  }

  const double v = receiver_speed;
  const double slow = v - params.dv;
  const double dt2 = params.dt2();
  const double s1 = v * params.dt1;
  const double s2 = s1 + slow * dt2;

  double total = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) total += distance(path[i], path[i - 1]);
  if (total < s2) throw PlannerError(PlannerErrc::kHorizonTooShort, "path ends before the gap is opened");

  auto time_at = [&](double s) {
    if (s <= s1) return s / v;
    if (s <= s2) return params.dt1 + (s - s1) / slow;
    return params.dt1 + dt2 + (s - s2) / v;
  };

  std::vector<TimedPoint> out;
  out.reserve(path.size() + 2);
  out.push_back({origin, now});
  double s = 0.0;
  constexpr double eps = 1e-9;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const double len = distance(path[i], path[i - 1]);
    for (double bp : {s1, s2}) {
      if (bp > s + eps && bp < s + len - eps) {
        out.push_back({lerp(path[i - 1], path[i], (bp - s) / len), now + time_at(bp)});
      }
    }
    s += len;
    out.push_back({path[i], now + time_at(s)});
  }
  return TimedTrajectory(std::move(out));
}

// ---------------------------------------------------------------------------
// Receiver side
// ---------------------------------------------------------------------------

// Target speed over time implied by a timed trajectory: the mean speed of
// the segment containing t, held constant before the start and after the end.
class SpeedSchedule {
 public:
  explicit SpeedSchedule(const TimedTrajectory& tt) {
    times_.reserve(tt.size());
    speeds_.reserve(tt.size() - 1);
    for (std::size_t i = 0; i < tt.size(); ++i) times_.push_back(tt[i].time);
    for (std::size_t i = 1; i < tt.size(); ++i) {
      speeds_.push_back(distance(tt[i].position, tt[i - 1].position) / (tt[i].time - tt[i - 1].time));
    }
    last_change_ = times_.front();
    for (std::size_t i = 1; i < speeds_.size(); ++i) {
      if (std::abs(speeds_[i] - speeds_[i - 1]) > 1e-6 * std::max(1.0, speeds_[i])) last_change_ = times_[i];
    }
  }

  double target_at(double t) const {
    if (t <= times_.front()) return speeds_.front();
    if (t >= times_.back()) return speeds_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    return speeds_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  double start_time() const { return times_.front(); }
  double end_time() const { return times_.back(); }
  // Time of the last speed change in the schedule.
  double last_change_time() const { return last_change_; }
  std::span<const double> segment_speeds() const { return speeds_; }

 private:
  std::vector<double> times_;
  std::vector<double> speeds_;
  double last_change_{0.0};
};

struct FeedbackParams {
  double gain{1.0};       // 1/s
  double max_accel{3.0};  // m/s^2
  double max_decel{3.0};  // m/s^2, positive magnitude
};

// Proportional speed tracking with saturation.
inline double feedback_accel(double v_target, double v_current, const FeedbackParams& fb) {
  return std::clamp(fb.gain * (v_target - v_current), -fb.max_decel, fb.max_accel);
}

struct VerificationLimits {
  double max_decel{5.0};        // m/s^2
  double min_speed{0.0};        // m/s
  double max_lateral_dev{0.5};  // m
  // Speed drops are measured across at least this much time, the span over
  // which feedback smoothing spreads a step change. 4 s lets a step of up to
  // 20 m/s through at the default max_decel.
  double decel_window{4.0};  // s
};

namespace detail {

// Lateral distance to a polyline: the end segments are extended to lines so
// a point slightly before the start or past the end is judged by its offset
// across the path, not by its distance to the end point.
inline double lateral_distance_to_path(Vec2 p, const TimedTrajectory& path) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t last = path.size() - 1;
  for (std::size_t i = 1; i <= last; ++i) {
    const Vec2 a = path[i - 1].position;
    const Vec2 b = path[i].position;
    const Vec2 ab = b - a;
    const double u = dot(p - a, ab) / dot(ab, ab);
    if ((i == 1 && u < 0.0) || (i == last && u > 1.0)) {
      best = std::min(best, std::abs(cross(ab, p - a)) / norm(ab));
    } else {
      best = std::min(best, distance_to_segment(p, a, b));
    }
  }
  return best;
}

// Unit tangent of the path segment nearest to p.
inline Vec2 path_tangent_near(Vec2 p, const TimedTrajectory& path) {
  std::size_t best_i = 1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < path.size(); ++i) {
    const double d = distance_to_segment(p, path[i - 1].position, path[i].position);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  const Vec2 d = path[best_i].position - path[best_i - 1].position;
  const double n = norm(d);
  return n > 0.0 ? (1.0 / n) * d : Vec2{1.0, 0.0};
}

}  // namespace detail

// Speeds along the receiver's own direction of travel implied by tt, one per segment.
inline std::vector<double> implied_speeds(const TimedTrajectory& tt, const TimedTrajectory& own_planned) {
  std::vector<double> v;
  v.reserve(tt.size() - 1);
  for (std::size_t i = 1; i < tt.size(); ++i) {
    const Vec2 step = tt[i].position - tt[i - 1].position;
    const Vec2 mid = lerp(tt[i - 1].position, tt[i].position, 0.5);
    const Vec2 tangent = detail::path_tangent_near(mid, own_planned);
    v.push_back(dot(step, tangent) / (tt[i].time - tt[i - 1].time));
  }
  return v;
}

inline bool verify_prescription(const TimedTrajectory& tt, const VerificationLimits& limits,
                                const TimedTrajectory& own_planned) {
  for (const auto& p : tt.points()) {
    if (detail::lateral_distance_to_path(p.position, own_planned) > limits.max_lateral_dev) return false;
  }
  const auto speeds = implied_speeds(tt, own_planned);
  for (double v : speeds) {
    if (v < limits.min_speed - 1e-9) return false;
  }
  if (speeds.size() < 2) return true;

  std::vector<double> mids(speeds.size());
  for (std::size_t i = 0; i < speeds.size(); ++i) mids[i] = 0.5 * (tt[i].time + tt[i + 1].time);
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    for (std::size_t j = i + 1; j < speeds.size(); ++j) {
      const double decel = (speeds[i] - speeds[j]) / std::max(limits.decel_window, mids[j] - mids[i]);
      if (decel > limits.max_decel + 1e-9) return false;
    }
  }
  return true;
}

// Speed command stream for a verified prescription. After abort() the
// stream tracks the stand-alone planned speed instead.
class PrescriptionLoader {
 public:
  PrescriptionLoader(const TimedTrajectory& prescription, FeedbackParams feedback, double planned_speed)
      : schedule_(prescription), feedback_(feedback), planned_speed_(planned_speed) {}

  double target_speed(double t) const { return aborted_ ? planned_speed_ : schedule_.target_at(t); }
  double command(double t, double v_current) const { return feedback_accel(target_speed(t), v_current, feedback_); }

  void abort() { aborted_ = true; }
  bool aborted() const { return aborted_; }
  const SpeedSchedule& schedule() const { return schedule_; }

 private:
  SpeedSchedule schedule_;
  FeedbackParams feedback_;
  double planned_speed_;
  bool aborted_{false};
};

inline PrescriptionLoader load_prescription(const TimedTrajectory& tt, const FeedbackParams& feedback,
                                            double planned_speed) {
  return PrescriptionLoader(tt, feedback, planned_speed);
}

}  // namespace mcm
