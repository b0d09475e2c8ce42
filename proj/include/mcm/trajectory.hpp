#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcm/geometry.hpp"

namespace mcm {

enum class TrajectoryErrc {
  kInvalid,
  kNoNearbyPoint,
  kZeroSpeed,
  kOutOfRange,
  kNoOverlap,
};

inline const char* to_string(TrajectoryErrc e) {
  switch (e) {
    case TrajectoryErrc::kInvalid: return "Invalid";
    case TrajectoryErrc::kNoNearbyPoint: return "NoNearbyPoint";
    case TrajectoryErrc::kZeroSpeed: return "ZeroSpeed";
    case TrajectoryErrc::kOutOfRange: return "OutOfRange";
    case TrajectoryErrc::kNoOverlap: return "NoOverlap";
  }
  return "?";
}

class TrajectoryError : public std::runtime_error {
 public:
  TrajectoryError(TrajectoryErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  TrajectoryErrc code() const noexcept { return code_; }

 private:
  TrajectoryErrc code_;
};

struct SpeedPoint {
  Vec2 position;
  double speed{0.0};  // m/s planned at this point
  friend bool operator==(const SpeedPoint&, const SpeedPoint&) = default;
};

struct TimedPoint {
  Vec2 position;
  double time{0.0};  // seconds, simulation clock
  friend bool operator==(const TimedPoint&, const TimedPoint&) = default;
};

// Location/speed pairs as maintained by a planner. Construction checks the
// shape (>= 2 points, distinct consecutive positions, finite, non-negative
// speeds). Positivity of the speeds used for timing is checked where they
// are used, in convert_trajectory.
class SpeedTrajectory {
 public:
  explicit SpeedTrajectory(std::vector<SpeedPoint> points) : points_(std::move(points)) {
    if (points_.size() < 2) {
      throw TrajectoryError(TrajectoryErrc::kInvalid, "speed trajectory needs at least 2 points");
    }
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      if (!std::isfinite(p.position.x) || !std::isfinite(p.position.y) || !std::isfinite(p.speed) ||
          p.speed < 0.0) {
        throw TrajectoryError(TrajectoryErrc::kInvalid, "bad point at index " + std::to_string(i));
      }
      if (i > 0 && points_[i - 1].position == p.position) {
        throw TrajectoryError(TrajectoryErrc::kInvalid,
                              "repeated position at index " + std::to_string(i));
      }
    }
  }

  std::span<const SpeedPoint> points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  const SpeedPoint& operator[](std::size_t i) const { return points_[i]; }

  friend bool operator==(const SpeedTrajectory&, const SpeedTrajectory&) = default;

 private:
  std::vector<SpeedPoint> points_;
};

// Location/time pairs: the payload of every trajectory-bearing message.
class TimedTrajectory {
 public:
  explicit TimedTrajectory(std::vector<TimedPoint> points) : points_(std::move(points)) {
    if (points_.size() < 2) {
      throw TrajectoryError(TrajectoryErrc::kInvalid, "timed trajectory needs at least 2 points");
    }
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto& p = points_[i];
      if (!std::isfinite(p.position.x) || !std::isfinite(p.position.y) || !std::isfinite(p.time)) {
        throw TrajectoryError(TrajectoryErrc::kInvalid, "non-finite point at " + std::to_string(i));
      }
      if (i > 0 && !(points_[i - 1].time < p.time)) {
        throw TrajectoryError(TrajectoryErrc::kInvalid,
                              "time not strictly increasing at index " + std::to_string(i));
      }
    }
  }

  std::span<const TimedPoint> points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }
  const TimedPoint& operator[](std::size_t i) const { return points_[i]; }
  const TimedPoint& front() const { return points_.front(); }
  const TimedPoint& back() const { return points_.back(); }
  double start_time() const { return points_.front().time; }
  double end_time() const { return points_.back().time; }

  friend bool operator==(const TimedTrajectory&, const TimedTrajectory&) = default;

 private:
  std::vector<TimedPoint> points_;
};

struct CollisionReport {
  bool colliding{false};
  double t_min{0.0};
  double d_min{std::numeric_limits<double>::infinity()};
};

inline constexpr double kDefaultSearchRadius = 50.0;  // m
inline constexpr double kDefaultCollisionThreshold = 5.0;  // m, center to center
inline constexpr double kDefaultCollisionStep = 0.1;  // s

// Index of the point nearest to `position`; ties go to the lower index.
inline std::size_t nearest_index(const SpeedTrajectory& st, Vec2 position) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < st.size(); ++i) {
    const double d = distance(st[i].position, position);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// Assigns arrival times to the planned points from the one nearest the
// vehicle onward, assuming constant speed v_{n-1} over each segment:
//   t_n = t_{n-1} + |x_n - x_{n-1}| / v_{n-1},  starting from t0.
inline TimedTrajectory convert_trajectory(const SpeedTrajectory& st, Vec2 current_position, double t0,
                                          double search_radius = kDefaultSearchRadius) {
  const std::size_t start = nearest_index(st, current_position);
  if (distance(st[start].position, current_position) > search_radius) {
    throw TrajectoryError(TrajectoryErrc::kNoNearbyPoint, "vehicle is not near its trajectory");
  }
  if (start + 1 >= st.size()) {
    throw TrajectoryError(TrajectoryErrc::kInvalid, "nearest point is the final point");
  }
  std::vector<TimedPoint> out;
  out.reserve(st.size() - start);
  out.push_back({st[start].position, t0});
  double t = t0;
  for (std::size_t n = start + 1; n < st.size(); ++n) {
    const double v = st[n - 1].speed;
    if (!(v > 0.0)) {
      throw TrajectoryError(TrajectoryErrc::kZeroSpeed, "zero speed at index " + std::to_string(n - 1));
    }
    t += distance(st[n].position, st[n - 1].position) / v;
    out.push_back({st[n].position, t});
  }
  return TimedTrajectory(std::move(out));
}

// Keeps every factor-th point from index 0, plus the final point.
inline TimedTrajectory thin_trajectory(const TimedTrajectory& tt, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("thinning factor must be >= 1");
  if (factor == 1) return tt;
  std::vector<TimedPoint> out;
  out.reserve(tt.size() / factor + 2);
  for (std::size_t i = 0; i < tt.size(); i += factor) out.push_back(tt[i]);
  if ((tt.size() - 1) % factor != 0) out.push_back(tt.back());
  return TimedTrajectory(std::move(out));
}

// Piecewise-linear position at time t. Exact at stored sample times.
inline Vec2 position_at(const TimedTrajectory& tt, double t) {
  if (!(t >= tt.start_time() && t <= tt.end_time())) {
    throw TrajectoryError(TrajectoryErrc::kOutOfRange, "time " + std::to_string(t) + " outside span");
  }
  const auto pts = tt.points();
  if (t == tt.end_time()) return pts.back().position;
  // First point with time > t; its predecessor brackets t from below.
  auto it = std::upper_bound(pts.begin(), pts.end(), t,
                             [](double value, const TimedPoint& p) { return value < p.time; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double alpha = (t - lo.time) / (hi.time - lo.time);
  return lerp(lo.position, hi.position, alpha);
}

// Clamped variant for callers that extrapolate by holding the end points.
inline Vec2 position_at_clamped(const TimedTrajectory& tt, double t) {
  return position_at(tt, std::clamp(t, tt.start_time(), tt.end_time()));
}

// Samples the common time span at `dt` (both ends included) and reports the
// closest approach.
inline CollisionReport detect_collision(const TimedTrajectory& a, const TimedTrajectory& b,
                                        double threshold = kDefaultCollisionThreshold,
                                        double dt = kDefaultCollisionStep) {
  if (!(dt > 0.0)) throw std::invalid_argument("collision sampling step must be positive");
  const double lo = std::max(a.start_time(), b.start_time());
  const double hi = std::min(a.end_time(), b.end_time());
  if (lo > hi) throw TrajectoryError(TrajectoryErrc::kNoOverlap, "time spans are disjoint");

  CollisionReport report;
  auto sample = [&](double t) {
    const double d = distance(position_at(a, t), position_at(b, t));
    if (d < report.d_min) {
      report.d_min = d;
      report.t_min = t;
    }
  };
  for (std::size_t k = 0;; ++k) {
    const double t = lo + static_cast<double>(k) * dt;
    if (t >= hi) break;
    sample(t);
  }
  sample(hi);
  report.colliding = report.d_min < threshold;
  return report;
}

// Path length of a timed trajectory.
inline double path_length(const TimedTrajectory& tt) {
  double s = 0.0;
  for (std::size_t i = 1; i < tt.size(); ++i) s += distance(tt[i].position, tt[i - 1].position);
  return s;
}

}  // namespace mcm
