#pragma once

// Scenario configuration files, single runs, parameter sweeps and CSV output.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "mcm/world.hpp"

namespace mcm {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, std::string_view v) {
  std::string s(v);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "not a number: '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(x)) throw ConfigError(key, "not a number: '" + s + "'");
  return x;
}

inline std::uint64_t to_uint(const std::string& key, std::string_view v) {
  std::string s(v);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key, "not a non-negative integer: '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(key, "integer out of range: '" + s + "'");
  }
}

inline bool to_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "not a boolean: '" + std::string(v) + "'");
}

using Setter = std::function<void(ScenarioConfig&, const std::string&, std::string_view)>;

inline Setter num(double ScenarioConfig::*field, double scale = 1.0) {
  return [=](ScenarioConfig& c, const std::string& k, std::string_view v) { c.*field = to_double(k, v) * scale; };
}

template <class Sub>
Setter sub_num(Sub ScenarioConfig::*sub, double Sub::*field, double scale = 1.0) {
  return [=](ScenarioConfig& c, const std::string& k, std::string_view v) {
    (c.*sub).*field = to_double(k, v) * scale;
  };
}

inline Setter flag(bool ScenarioConfig::*field) {
  return [=](ScenarioConfig& c, const std::string& k, std::string_view v) { c.*field = to_bool(k, v); };
}

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["scenario"] = [](ScenarioConfig& c, const std::string& k, std::string_view v) {
      if (v == "lane_change_2") {
        c.scenario = ScenarioKind::kLaneChange2;
      } else if (v == "lane_change_4") {
        c.scenario = ScenarioKind::kLaneChange4;
      } else {
        throw ConfigError(k, "expected lane_change_2 or lane_change_4");
      }
    };
    t["speed_kmh"] = num(&ScenarioConfig::speed_kmh);
    t["loss_rate"] = num(&ScenarioConfig::loss_rate);
    t["latency_s"] = num(&ScenarioConfig::latency_s);
    t["seed"] = [](ScenarioConfig& c, const std::string& k, std::string_view v) { c.seed = to_uint(k, v); };
    t["mcm_enabled"] = flag(&ScenarioConfig::mcm_enabled);
    t["stream_mcm"] = flag(&ScenarioConfig::stream_mcm);
    t["trace"] = flag(&ScenarioConfig::trace);
    t["record_samples"] = flag(&ScenarioConfig::record_samples);

    t["t_timeout_s"] = sub_num(&ScenarioConfig::protocol, &ProtocolParams::t_timeout);
    t["dt_resend_s"] = sub_num(&ScenarioConfig::protocol, &ProtocolParams::dt_resend);
    t["cam_frequency_hz"] = sub_num(&ScenarioConfig::protocol, &ProtocolParams::cam_frequency);
    t["advertising_duration_s"] = sub_num(&ScenarioConfig::protocol, &ProtocolParams::advertising_duration);
    t["cam_liveness_window_s"] = sub_num(&ScenarioConfig::protocol, &ProtocolParams::cam_liveness_window);
    t["max_prescription_attempts"] = [](ScenarioConfig& c, const std::string& k, std::string_view v) {
      const auto n = to_uint(k, v);
      if (n < 1 || n > 100) throw ConfigError(k, "must be in 1..100");
      c.protocol.max_prescription_attempts = static_cast<int>(n);
    };

    t["d0_m"] = sub_num(&ScenarioConfig::prescription, &PrescriptionParams::d0);
    t["dv_kmh"] = sub_num(&ScenarioConfig::prescription, &PrescriptionParams::dv, 1.0 / 3.6);
    t["dt1_s"] = [](ScenarioConfig& c, const std::string& k, std::string_view v) {
      c.prescription.dt1 = to_double(k, v);
      c.dt1_set = true;
    };
    t["collision_threshold_m"] = sub_num(&ScenarioConfig::prescription, &PrescriptionParams::collision_threshold);

    t["dt_sim_s"] = num(&ScenarioConfig::dt_sim);
    t["lane_width_m"] = num(&ScenarioConfig::lane_width);
    t["road_length_m"] = num(&ScenarioConfig::road_length);
    t["vehicle_length_m"] = num(&ScenarioConfig::vehicle_length);
    t["receiver_start_x_m"] = num(&ScenarioConfig::receiver_start_x);
    t["goal_distance_m"] = num(&ScenarioConfig::goal_distance);
    t["initial_gap_m"] = num(&ScenarioConfig::initial_gap);
    t["lead_gap_m"] = num(&ScenarioConfig::lead_gap);
    t["lane_change_duration_s"] = num(&ScenarioConfig::lane_change_duration);
    t["lane_change_desired_at_s"] = num(&ScenarioConfig::lane_change_desired_at);
    t["standalone_delay_s"] = num(&ScenarioConfig::standalone_delay);
    t["resume_gap_m"] = num(&ScenarioConfig::resume_gap);
    t["cruise_gain"] = num(&ScenarioConfig::cruise_gain);
    t["gap_margin_m"] = num(&ScenarioConfig::gap_margin);
    t["onset_fallback_s"] = num(&ScenarioConfig::onset_fallback);
    t["max_time_s"] = num(&ScenarioConfig::max_time);
    t["point_spacing_m"] = num(&ScenarioConfig::point_spacing);
    t["thinning"] = [](ScenarioConfig& c, const std::string& k, std::string_view v) {
      const auto n = to_uint(k, v);
      if (n < 1) throw ConfigError(k, "must be >= 1");
      c.thinning = static_cast<std::size_t>(n);
    };

    t["cf_time_gap_s"] = sub_num(&ScenarioConfig::car_following, &CarFollowingParams::time_gap);
    t["cf_s0_m"] = sub_num(&ScenarioConfig::car_following, &CarFollowingParams::s0);
    t["cf_kv"] = sub_num(&ScenarioConfig::car_following, &CarFollowingParams::kv);
    t["cf_kd"] = sub_num(&ScenarioConfig::car_following, &CarFollowingParams::kd);
    t["max_accel"] = sub_num(&ScenarioConfig::car_following, &CarFollowingParams::max_accel);
    t["max_decel"] = sub_num(&ScenarioConfig::car_following, &CarFollowingParams::max_decel);

    t["feedback_gain"] = sub_num(&ScenarioConfig::feedback, &FeedbackParams::gain);
    t["feedback_max_accel"] = sub_num(&ScenarioConfig::feedback, &FeedbackParams::max_accel);
    t["feedback_max_decel"] = sub_num(&ScenarioConfig::feedback, &FeedbackParams::max_decel);

    t["verify_max_decel"] = sub_num(&ScenarioConfig::limits, &VerificationLimits::max_decel);
    t["verify_min_speed"] = sub_num(&ScenarioConfig::limits, &VerificationLimits::min_speed);
    t["verify_max_lateral_dev_m"] = sub_num(&ScenarioConfig::limits, &VerificationLimits::max_lateral_dev);
    t["verify_decel_window_s"] = sub_num(&ScenarioConfig::limits, &VerificationLimits::decel_window);

    t["silence_station"] = [](ScenarioConfig& c, const std::string& k, std::string_view v) {
      const auto n = to_uint(k, v);
      if (n > std::numeric_limits<StationId>::max()) throw ConfigError(k, "station id out of range");
      c.silence_station = static_cast<StationId>(n);
    };
    t["silence_at_s"] = num(&ScenarioConfig::silence_at);
    return t;
  }();
  return table;
}

inline void require(bool ok, const char* key, const char* what) {
  if (!ok) throw ConfigError(key, what);
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : config_detail::setters()) keys.push_back(k);
  return keys;
}

inline void apply_setting(ScenarioConfig& cfg, const std::string& key, std::string_view value) {
  const auto& t = config_detail::setters();
  auto it = t.find(key);
  if (it == t.end()) throw ConfigError(key, "unknown key");
  it->second(cfg, key, config_detail::trim(value));
}

// Range checks across the whole configuration.
inline void validate(const ScenarioConfig& c) {
  using config_detail::require;
  require(c.speed_kmh > 0.0, "speed_kmh", "must be > 0");
  require(c.loss_rate >= 0.0 && c.loss_rate <= 1.0, "loss_rate", "must be in [0, 1]");
  require(c.latency_s >= 0.0, "latency_s", "must be >= 0");
  require(c.protocol.t_timeout >= 0.0, "t_timeout_s", "must be >= 0");
  require(c.protocol.dt_resend > 0.0, "dt_resend_s", "must be > 0");
  require(c.protocol.cam_frequency > 0.0, "cam_frequency_hz", "must be > 0");
  require(c.protocol.advertising_duration > 0.0, "advertising_duration_s", "must be > 0");
  require(c.protocol.cam_liveness_window > 0.0, "cam_liveness_window_s", "must be > 0");
  require(c.prescription.d0 > 0.0, "d0_m", "must be > 0");
  require(c.prescription.dv >= kMinSpeedReduction, "dv_kmh", "must be >= 0.36 km/h");
  require(c.prescription.dv < c.cruise_speed(), "dv_kmh", "must be below the cruise speed");
  require(c.dt1() >= 0.0, "dt1_s", "must be >= 0");
  require(c.dt_sim > 0.0 && c.dt_sim <= 0.1, "dt_sim_s", "must be in (0, 0.1]");
  require(c.lane_width > 2.0, "lane_width_m", "must exceed a vehicle width");
  require(c.vehicle_length > 0.0, "vehicle_length_m", "must be > 0");
  require(c.goal_distance > 0.0, "goal_distance_m", "must be > 0");
  require(c.receiver_start_x + c.goal_distance <= c.road_length, "goal_distance_m", "goal lies beyond the road");
  require(c.lane_change_duration > 0.0, "lane_change_duration_s", "must be > 0");
  require(c.max_time > 0.0, "max_time_s", "must be > 0");
  require(c.point_spacing > 0.0, "point_spacing_m", "must be > 0");
  require(c.car_following.max_accel > 0.0, "max_accel", "must be > 0");
  require(c.car_following.max_decel > 0.0, "max_decel", "must be > 0");
  require(c.feedback.gain > 0.0, "feedback_gain", "must be > 0");
  require(c.limits.decel_window >= 0.0, "verify_decel_window_s", "must be >= 0");
}

// key=value lines; '#' starts a comment. Unknown or repeated keys are errors.
inline ScenarioConfig parse_config(std::string_view text) {
  ScenarioConfig cfg;
  std::set<std::string> seen;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(line), "line " + std::to_string(line_no) + " is not key=value");
    }
    const std::string key(config_detail::trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ConfigError(key, "given twice");
    apply_setting(cfg, key, line.substr(eq + 1));
  }
  validate(cfg);
  return cfg;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

enum class Outcome { kSuccess, kAbortedCommLoss, kAbortedRefused, kAbortedTimeout };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "Success";
    case Outcome::kAbortedCommLoss: return "AbortedCommLoss";
    case Outcome::kAbortedRefused: return "AbortedRefused";
    case Outcome::kAbortedTimeout: return "AbortedTimeout";
  }
  return "?";
}

struct RunMetrics {
  std::optional<double> arrival_time;  // s; empty when the receiver never reached the goal
  // (second, type) -> bytes put on the air during [second, second + 1), stream filler included
  std::map<std::pair<int, MessageType>, std::size_t> bytes_per_second;
  Outcome coordination_outcome{Outcome::kAbortedTimeout};
  double min_gap{std::numeric_limits<double>::infinity()};

  StationId focus{0};
  double end_time{0.0};
  std::size_t total_bytes{0};
  std::size_t streamed_bytes{0};
  std::map<MessageType, std::size_t> bytes_by_type;  // event-driven traffic only
  std::map<MessageType, std::size_t> sends_by_type;
  std::size_t emergency_stops{0};
  std::vector<std::pair<StationId, SeqNum>> prescriptions;  // distinct (target, seq)
  std::vector<StationId> cancel_targets;                    // Cancels sent by the prescriber
  std::optional<OnsetRecord> onset;
  std::optional<PlanRecord> plan;
  std::vector<RevertRecord> reverts;
  std::vector<std::pair<double, StationId>> finishes;
  std::map<StationId, double> min_speed;
  std::map<StationId, double> max_speed;
  std::vector<std::string> trace;
  std::vector<SpeedSample> samples;
  std::uint64_t channel_copies{0};
  std::uint64_t channel_delivered{0};
  std::uint64_t channel_dropped{0};
  std::uint64_t channel_in_flight{0};
};

inline Outcome classify(const WorldState& w) {
  if (!w.log.arrival_time) return Outcome::kAbortedTimeout;
  if (!w.config.mcm_enabled) return Outcome::kSuccess;
  const VehicleState* p = w.find(kPrescriberId);
  switch (p->outcome) {
    case PrescriberOutcome::kFinished:
    case PrescriberOutcome::kNoConflict: return Outcome::kSuccess;
    case PrescriberOutcome::kPending:
    case PrescriberOutcome::kNoResponders: return Outcome::kAbortedTimeout;
    case PrescriberOutcome::kAborted: break;
  }
  switch (p->abort_cause.value_or(AbortCause::kTimeout)) {
    case AbortCause::kCommLoss: return Outcome::kAbortedCommLoss;
    case AbortCause::kRefused:
    case AbortCause::kNotTarget: return Outcome::kAbortedRefused;
    case AbortCause::kTimeout:
    case AbortCause::kScenarioAborted: return Outcome::kAbortedTimeout;
  }
  return Outcome::kAbortedTimeout;
}

inline RunMetrics collect_metrics(const WorldState& w) {
  RunMetrics m;
  m.arrival_time = w.log.arrival_time;
  m.coordination_outcome = classify(w);
  m.min_gap = w.log.min_gap;
  m.focus = w.focus;
  m.end_time = w.clock();
  std::set<std::pair<StationId, SeqNum>> seen;
  for (const auto& t : w.log.transmissions) {
    const int second = static_cast<int>(std::floor(t.time + 1e-9));
    m.bytes_per_second[{second, t.type}] += t.bytes;
    m.total_bytes += t.bytes;
    if (t.streamed) {
      m.streamed_bytes += t.bytes;
      continue;
    }
    m.bytes_by_type[t.type] += t.bytes;
    ++m.sends_by_type[t.type];
    if (t.type == MessageType::kPrescription && seen.insert({t.target, t.seq}).second) {
      m.prescriptions.emplace_back(t.target, t.seq);
    }
    if (t.type == MessageType::kCancel && t.sender == kPrescriberId) m.cancel_targets.push_back(t.target);
  }
  m.emergency_stops = w.log.emergency_stops.size();
  if (!w.log.onsets.empty()) m.onset = w.log.onsets.front();
  if (!w.log.plans.empty()) m.plan = w.log.plans.back();
  m.reverts = w.log.reverts;
  m.finishes = w.log.finishes;
  m.min_speed = w.log.min_speed;
  m.max_speed = w.log.max_speed;
  for (const auto& r : w.log.transitions) m.trace.push_back(format_transition(r));
  m.samples = w.log.samples;
  m.channel_copies = w.channel.copies;
  m.channel_delivered = w.channel.delivered;
  m.channel_dropped = w.channel.dropped;
  m.channel_in_flight = w.channel.in_flight.size();
  return m;
}

inline RunMetrics run_scenario(const ScenarioConfig& config) {
  validate(config);
  WorldState w = make_world(config);
  run_to_end(w);
  return collect_metrics(w);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { kLossRate, kTimeout, kSpeed };

inline SweepAxis parse_axis(std::string_view name) {
  if (name == "loss_rate") return SweepAxis::kLossRate;
  if (name == "t_timeout") return SweepAxis::kTimeout;
  if (name == "speed") return SweepAxis::kSpeed;
  throw ConfigError(std::string(name), "axis must be loss_rate, t_timeout or speed");
}

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kLossRate: return "loss_rate";
    case SweepAxis::kTimeout: return "t_timeout";
    case SweepAxis::kSpeed: return "speed";
  }
  return "?";
}

inline const char* column_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kLossRate: return "loss_rate";
    case SweepAxis::kTimeout: return "t_timeout_s";
    case SweepAxis::kSpeed: return "speed_kmh";
  }
  return "?";
}

inline ScenarioConfig with_axis(ScenarioConfig c, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kLossRate: c.loss_rate = value; break;
    case SweepAxis::kTimeout: c.protocol.t_timeout = value; break;
    case SweepAxis::kSpeed: c.speed_kmh = value; break;
  }
  return c;
}

inline constexpr std::array<const char*, 4> kBucketNames{"le_t0+1", "t0+1_t0+2", "t0+2_t0+3", "gt_t0+3"};

// Bucket of an arrival time relative to the reference t0; runs that never
// arrive fall in the slowest bucket.
inline std::size_t arrival_bucket(std::optional<double> arrival, double t0) {
  if (!arrival) return 3;
  const double late = *arrival - t0;
  if (late <= 1.0 + 1e-9) return 0;
  if (late <= 2.0 + 1e-9) return 1;
  if (late <= 3.0 + 1e-9) return 2;
  return 3;
}

struct SweepRun {
  double value{0.0};
  int rep{0};
  std::uint64_t seed{0};
  RunMetrics metrics;
};

struct SweepPoint {
  double value{0.0};
  double t0{0.0};  // lossless reference arrival time for this value
  std::vector<SweepRun> runs;
  std::array<double, 4> bucket_share{};
  double mean_arrival{0.0};    // over runs that arrived
  double median_arrival{0.0};  // over runs that arrived
  double success_share{0.0};
  std::size_t emergency_runs{0};
};

struct SweepTable {
  SweepAxis axis{SweepAxis::kLossRate};
  double timeout{0.0};
  int reps{0};
  std::vector<SweepPoint> points;
};

// Runs `jobs` on a small pool; each job writes only its own slot.
inline void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& body, unsigned threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline SweepTable sweep(const ScenarioConfig& config, SweepAxis axis, const std::vector<double>& values, int reps,
                        unsigned threads = 0) {
  if (reps < 1) throw ConfigError("reps", "must be >= 1");
  if (values.empty()) throw ConfigError("values", "need at least one value");
  for (double v : values) validate(with_axis(config, axis, v));

  SweepTable table{axis, config.protocol.t_timeout, reps, {}};
  const std::size_t nv = values.size();
  const auto r = static_cast<std::size_t>(reps);
  // Lossless references first (one per value), then every repetition.
  std::vector<RunMetrics> refs(nv);
  std::vector<RunMetrics> runs(nv * r);
  parallel_for(
      nv + nv * r,
      [&](std::size_t job) {
        if (job < nv) {
          ScenarioConfig c = with_axis(config, axis, values[job]);
          c.loss_rate = 0.0;
          c.trace = false;
          refs[job] = run_scenario(c);
          return;
        }
        const std::size_t k = job - nv;
        ScenarioConfig c = with_axis(config, axis, values[k / r]);
        c.seed = config.seed + k % r;
        c.trace = false;
        runs[k] = run_scenario(c);
      },
      threads);

  for (std::size_t i = 0; i < nv; ++i) {
    SweepPoint pt;
    pt.value = values[i];
    pt.t0 = refs[i].arrival_time.value_or(std::numeric_limits<double>::infinity());
    std::vector<double> arrivals;
    std::size_t successes = 0;
    for (std::size_t j = 0; j < r; ++j) {
      RunMetrics& m = runs[i * r + j];
      pt.bucket_share[arrival_bucket(m.arrival_time, pt.t0)] += 1.0 / static_cast<double>(r);
      if (m.arrival_time) arrivals.push_back(*m.arrival_time);
      if (m.coordination_outcome == Outcome::kSuccess) ++successes;
      if (m.emergency_stops > 0) ++pt.emergency_runs;
      pt.runs.push_back({values[i], static_cast<int>(j), config.seed + j, std::move(m)});
    }
    double sum = 0.0;
    for (double a : arrivals) sum += a;
    pt.mean_arrival = arrivals.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / arrivals.size();
    pt.median_arrival = median_of(arrivals);
    pt.success_share = static_cast<double>(successes) / static_cast<double>(r);
    table.points.push_back(std::move(pt));
  }
  return table;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  std::string s(buf);
  s.erase(s.find_last_not_of('0') + 1);
  if (s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

inline std::string to_csv_text(const CsvTable& t) {
  auto join = [](const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    return line + '\n';
  };
  std::string out = join(t.header);
  for (const auto& r : t.rows) out += join(r);
  return out;
}

inline void emit_csv(const CsvTable& table, const std::filesystem::path& path) {
  if (table.rows.empty()) throw IoError("refusing to write empty table to " + path.string());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv_text(table);
  out.close();
  if (!out) throw IoError("write failed for " + path.string());
}

// time_s,msg_type,bytes with every second from 0 to the end of the run for
// each message type that appeared.
inline CsvTable bandwidth_table(const RunMetrics& m) {
  CsvTable t{{"time_s", "msg_type", "bytes"}, {}};
  std::set<MessageType> types;
  for (const auto& [key, _] : m.bytes_per_second) types.insert(key.second);
  const int last = static_cast<int>(std::floor(m.end_time - 1e-9));
  for (int s = 0; s <= last; ++s) {
    for (MessageType type : types) {
      auto it = m.bytes_per_second.find({s, type});
      const std::size_t b = it == m.bytes_per_second.end() ? 0 : it->second;
      t.rows.push_back({std::to_string(s), to_string(type), std::to_string(b)});
    }
  }
  return t;
}

inline CsvTable summary_table(const RunMetrics& m) {
  CsvTable t{{"metric", "value"}, {}};
  auto add = [&](std::string k, std::string v) { t.rows.push_back({std::move(k), std::move(v)}); };
  add("outcome", to_string(m.coordination_outcome));
  add("arrival_time_s", m.arrival_time ? fmt(*m.arrival_time) : "none");
  add("min_gap_m", fmt(m.min_gap));
  add("emergency_stops", std::to_string(m.emergency_stops));
  add("total_bytes", std::to_string(m.total_bytes));
  add("streamed_bytes", std::to_string(m.streamed_bytes));
  for (const auto& [type, b] : m.bytes_by_type) add(std::string("bytes_") + to_string(type), std::to_string(b));
  add("prescriptions", std::to_string(m.prescriptions.size()));
  if (m.onset) {
    add("onset_time_s", fmt(m.onset->time));
    add("onset_gap_m", fmt(m.onset->gap));
  }
  if (m.plan) add("planned_total_gap_m", fmt(m.plan->total_gap));
  add("end_time_s", fmt(m.end_time));
  return t;
}

inline CsvTable samples_table(const RunMetrics& m) {
  CsvTable t{{"time_s", "station", "x_m", "y_m", "speed_mps", "mode"}, {}};
  for (const auto& s : m.samples) {
    t.rows.push_back({fmt(s.time), std::to_string(s.station), fmt(s.position.x), fmt(s.position.y), fmt(s.speed),
                      to_string(s.mode)});
  }
  return t;
}

// <axis>,timeout_s,bucket,share; for the loss axis this is loss_rate,timeout_s,bucket,share.
inline CsvTable bucket_table(const SweepTable& s) {
  CsvTable t{{column_name(s.axis), "timeout_s", "bucket", "share"}, {}};
  for (const auto& p : s.points) {
    for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
      const double timeout = s.axis == SweepAxis::kTimeout ? p.value : s.timeout;
      t.rows.push_back({fmt(p.value), fmt(timeout), kBucketNames[b], fmt(p.bucket_share[b])});
    }
  }
  return t;
}

inline CsvTable sweep_summary_table(const SweepTable& s) {
  CsvTable t{{column_name(s.axis), "reps", "t0_s", "mean_arrival_s", "median_arrival_s", "success_share",
              "emergency_share"},
             {}};
  for (const auto& p : s.points) {
    t.rows.push_back({fmt(p.value), std::to_string(s.reps), fmt(p.t0), fmt(p.mean_arrival), fmt(p.median_arrival),
                      fmt(p.success_share), fmt(static_cast<double>(p.emergency_runs) / s.reps)});
  }
  return t;
}

inline CsvTable sweep_runs_table(const SweepTable& s) {
  CsvTable t{{column_name(s.axis), "rep", "seed", "outcome", "arrival_time_s", "min_gap_m", "emergency_stops",
              "total_bytes"},
             {}};
  for (const auto& p : s.points) {
    for (const auto& r : p.runs) {
      const auto& m = r.metrics;
      t.rows.push_back({fmt(r.value), std::to_string(r.rep), std::to_string(r.seed), to_string(m.coordination_outcome),
                        m.arrival_time ? fmt(*m.arrival_time) : "none", fmt(m.min_gap),
                        std::to_string(m.emergency_stops), std::to_string(m.total_bytes)});
    }
  }
  return t;
}

// Loss rate at which the slowest bucket first holds more than half the runs.
inline std::optional<double> degradation_onset(const SweepTable& s) {
  for (const auto& p : s.points) {
    if (p.bucket_share[3] > 0.5 + 1e-12) return p.value;
  }
  return std::nullopt;
}

}  // namespace mcm
