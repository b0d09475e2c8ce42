#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mcm/planner.hpp"

using namespace mcm;

namespace {

LaneGeometry two_lanes() {
  // lane 0 centered on y=0, lane 1 on y=-3.5, both along +x
  return LaneGeometry{{Lane{0, {0, 0}, {300, 0}, 3.5}, Lane{1, {0, -3.5}, {300, -3.5}, 3.5}}};
}

TimedTrajectory straight(double x0, double y, double v, double t0, int n, double spacing = 1.0) {
  std::vector<TimedPoint> pts;
  for (int k = 0; k < n; ++k) pts.push_back({{x0 + spacing * k, y}, t0 + spacing * k / v});
  return TimedTrajectory(std::move(pts));
}

Candidate cand(StationId id, Vec2 pos) { return {id, straight(pos.x, pos.y, 8, 0, 5), pos}; }

// Arc length of p along the (straight, +x) path starting at x0.
double s_of(Vec2 p, double x0) { return p.x - x0; }

}  // namespace

TEST(Filter, KeepsInsideRemovesAdjacentInclusiveBoundary) {
  const auto g = two_lanes();
  const auto out = filter_in_lane({cand(1, {50, -3.5}), cand(2, {50, 0}), cand(3, {60, -1.75}), cand(4, {70, -5.25}),
                                   cand(5, {80, -5.2500001})},
                                  g, 1);
  std::vector<StationId> ids;
  for (const auto& c : out) ids.push_back(c.station);
  EXPECT_EQ(ids, (std::vector<StationId>{1, 3, 4}));
  EXPECT_THROW(filter_in_lane({cand(1, {0, 0})}, g, 7), PlannerError);
}

TEST(Filter, PointInRectangleOracle) {
  // a tilted lane checked against an explicit corner-based rectangle test
  const Lane lane{0, {0, 0}, {30, 40}, 4.0};
  const LaneGeometry g{{lane}};
  const Vec2 u{0.6, 0.8}, n{-0.8, 0.6};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> c(-10, 60);
  std::vector<Candidate> cs;
  for (StationId i = 1; i <= 2000; ++i) cs.push_back(cand(i, {c(rng), c(rng)}));
  const auto kept = filter_in_lane(cs, g, 0);
  std::size_t expected = 0;
  for (const auto& cd : cs) {
    const double along = dot(cd.position, u), across = dot(cd.position, n);
    if (along >= -1e-9 && along <= 50 + 1e-9 && std::abs(across) <= 2.0 + 1e-9) ++expected;
  }
  EXPECT_EQ(kept.size(), expected);
  EXPECT_GT(expected, 0u);
}

TEST(Leading, Examples) {
  std::vector<std::pair<StationId, Vec2>> c{{1, {10, 0}}, {2, {30, 0}}, {3, {20, 0}}};
  EXPECT_EQ(find_leading(c, {1, 0}), 2u);
  std::vector<std::pair<StationId, Vec2>> one{{9, {0, 0}}};
  EXPECT_EQ(find_leading(one, {1, 0}), 9u);
  // Fig. 4 style: A is ahead but filtered out upstream
  std::vector<std::pair<StationId, Vec2>> bc{{3, {30, -3.5}}, {4, {20, -3.5}}};
  EXPECT_EQ(find_leading(bc, {1, 0}), 3u);
  EXPECT_THROW(find_leading(std::span<const std::pair<StationId, Vec2>>{}, {1, 0}), PlannerError);
}

TEST(Leading, InvariantUnderPermutationAndScaling) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> c(-100, 100), a(0, 2 * M_PI), k(0.01, 100);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::pair<StationId, Vec2>> cs;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) cs.push_back({static_cast<StationId>(i + 1), {c(rng), c(rng)}});
    if (n > 2) cs[2].second = cs[1].second;  // a tie
    const double th = a(rng);
    const Vec2 h{std::cos(th), std::sin(th)};
    const StationId base = find_leading(cs, h);
    // pairwise oracle: nobody is strictly in front of the winner
    const Vec2 pw = std::find_if(cs.begin(), cs.end(), [&](auto& p) { return p.first == base; })->second;
    for (const auto& [id, p] : cs) EXPECT_LE(dot(h, p - pw), 1e-12);
    const double s = k(rng);
    EXPECT_EQ(find_leading(cs, Vec2{h.x * s, h.y * s}), base);
    for (int r = 0; r < 5; ++r) {
      std::shuffle(cs.begin(), cs.end(), rng);
      EXPECT_EQ(find_leading(cs, h), base);
    }
  }
}

TEST(Prescribe, PaperTimeline) {
  const PrescriptionParams p;  // d0 20, dv 20 km/h
  EXPECT_NEAR(p.dt2(), 3.6, 1e-12);
  const double v = 30 / 3.6;
  const auto rtt = straight(0, -3.5, v, 0, 200);
  const auto out = generate_prescribed(rtt, v, 3.0, p, 1.0);
  const auto tl = prescription_timeline(p, 3.0, 1.0);
  EXPECT_NEAR(tl.decel_start, 3.0, 1e-12);
  EXPECT_NEAR(tl.decel_end, 6.6, 1e-12);
  EXPECT_NEAR(tl.total_gap, 23.0, 1e-12);
  // the slow phase runs at v - dv = 2.778 m/s
  EXPECT_NEAR(SpeedSchedule(out).target_at(4.0), v - p.dv, 1e-9);
  EXPECT_NEAR(SpeedSchedule(out).target_at(2.0), v, 1e-9);
  EXPECT_NEAR(SpeedSchedule(out).target_at(7.0), v, 1e-9);
  // gap opened: planned position minus prescribed position after decel_end
  const double lag = s_of(position_at(rtt, 10.0), 0) - s_of(position_at(out, 10.0), 0);
  EXPECT_NEAR(lag, 20.0, 1e-9);
}

TEST(Prescribe, ShortfallIntegralOracle) {
  PrescriptionParams p;
  p.d0 = 10;
  p.dv = 5;
  p.dt1 = 1.5;
  const double v = 12;
  const double now = 0.3;
  const auto rtt = straight(0, 0, v, 0, 200);
  const auto out = generate_prescribed(rtt, v, 4.0, p, now);
  EXPECT_NEAR(p.dt2(), 2.0, 1e-12);
  // integral of (planned speed - prescribed speed) at 1 ms steps
  const double h = 1e-3;
  const double t_end = now + p.dt1 + p.dt2() + 3.0;
  double shortfall = 0;
  Vec2 prev = position_at(out, now);
  for (long k = 1; now + k * h <= t_end + 1e-12; ++k) {
    const Vec2 cur = position_at(out, now + k * h);
    const double v_presc = distance(cur, prev) / h;
    shortfall += (v - v_presc) * h;
    prev = cur;
  }
  EXPECT_NEAR(shortfall, 10.0, 1e-3);
}

TEST(Prescribe, ConservesCurvedPath) {
  std::vector<TimedPoint> pts;
  for (int k = 0; k < 150; ++k) {
    const double th = 0.01 * k;
    pts.push_back({{80 * std::sin(th), 80 * (1 - std::cos(th))}, k * 0.1});
  }
  const TimedTrajectory rtt(std::move(pts));
  const auto out = generate_prescribed(rtt, 8.0, 0, PrescriptionParams{}, 0.55);
  for (const auto& p : out.points()) EXPECT_LT(detail::lateral_distance_to_path(p.position, rtt), 1e-9);
  EXPECT_EQ(out.back().position, rtt.back().position);
  // the remaining path from the current point (between vertices 5 and 6) is kept whole
  double rest = distance(position_at(rtt, 0.55), rtt[6].position);
  for (std::size_t i = 7; i < rtt.size(); ++i) rest += distance(rtt[i].position, rtt[i - 1].position);
  EXPECT_NEAR(path_length(out), rest, 1e-9);
}

TEST(Prescribe, Errors) {
  const auto rtt = straight(0, 0, 8, 0, 200);
  auto code = [&](double v, PrescriptionParams p, double now, const TimedTrajectory& tt) {
    try {
      generate_prescribed(tt, v, 0, p, now);
    } catch (const PlannerError& e) {
      return std::optional(e.code());
    }
    return std::optional<PlannerErrc>();
  };
  PrescriptionParams p;
  EXPECT_EQ(code(p.dv, p, 0, rtt), PlannerErrc::kTooSlow);
  EXPECT_EQ(code(3.0, p, 0, rtt), PlannerErrc::kTooSlow);
  PrescriptionParams tiny = p;
  tiny.dv = 0.05;
  EXPECT_EQ(code(8, tiny, 0, rtt), PlannerErrc::kInvalidParams);
  PrescriptionParams neg = p;
  neg.d0 = 0;
  EXPECT_EQ(code(8, neg, 0, rtt), PlannerErrc::kInvalidParams);
  EXPECT_EQ(code(8, p, 100, rtt), PlannerErrc::kHorizonTooShort);
  EXPECT_EQ(code(8, p, 0, straight(0, 0, 8, 0, 20)), PlannerErrc::kHorizonTooShort);
  EXPECT_FALSE(code(8, p, 0, rtt));
}

TEST(Verify, GeneratedPrescriptionsAccepted) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> kmh(20, 60), d0(10, 30), frac(0.02, 0.98), dt1(0, 3), gap(0, 10);
  for (int trial = 0; trial < 500; ++trial) {
    const double v = kmh(rng) / 3.6;
    PrescriptionParams p;
    p.d0 = d0(rng);
    p.dv = std::max(kMinSpeedReduction, frac(rng) * v);
    p.dt1 = dt1(rng);
    const double horizon = p.dt1 + p.dt2() + 5;
    const int n = static_cast<int>(v * horizon) + 5;
    const auto rtt = straight(0, -3.5, v, 0, n);
    const auto out = generate_prescribed(rtt, v, gap(rng), p, 0.0);
    EXPECT_TRUE(verify_prescription(out, VerificationLimits{}, rtt))
        << "v=" << v << " dv=" << p.dv << " d0=" << p.d0;
  }
}

TEST(Verify, RejectsReverseAndHardBraking) {
  const auto own = straight(0, 0, 10, 0, 100);
  // -1 m/s: positions move backwards along the path
  const TimedTrajectory reverse({{{20, 0}, 0}, {{19, 0}, 1}, {{18, 0}, 2}});
  EXPECT_FALSE(verify_prescription(reverse, VerificationLimits{}, own));

  // 12 m/s^2 sustained from 30 m/s for 2.5 s, sampled every 0.1 s
  std::vector<TimedPoint> pts;
  double x = 0, vel = 30;
  for (int k = 0; k <= 60; ++k) {
    pts.push_back({{x, 0}, k * 0.1});
    const double next = k < 25 ? vel - 1.2 : vel;
    x += 0.5 * (vel + next) * 0.1;
    vel = next;
  }
  const TimedTrajectory hard(pts);
  const auto own_long = straight(0, 0, 30, 0, 400);
  // finite-difference oracle on the trajectory itself
  double worst = 0;
  for (std::size_t i = 2; i < hard.size(); ++i) {
    const double v1 = (hard[i - 1].position.x - hard[i - 2].position.x) / 0.1;
    const double v2 = (hard[i].position.x - hard[i - 1].position.x) / 0.1;
    worst = std::max(worst, (v1 - v2) / 0.1);
  }
  EXPECT_NEAR(worst, 12.0, 1e-6);
  EXPECT_FALSE(verify_prescription(hard, VerificationLimits{}, own_long));
  VerificationLimits loose;
  loose.max_decel = 12.5;
  EXPECT_TRUE(verify_prescription(hard, loose, own_long));
}

TEST(Verify, RejectsLateralDeviation) {
  const auto own = straight(0, 0, 10, 0, 100);
  const TimedTrajectory off({{{10, 0.2}, 0}, {{20, 0.7}, 1}, {{30, 0.7}, 2}});
  EXPECT_FALSE(verify_prescription(off, VerificationLimits{}, own));
  const TimedTrajectory near({{{10, 0.2}, 0}, {{20, 0.4}, 1}, {{30, -0.4}, 2}});
  EXPECT_TRUE(verify_prescription(near, VerificationLimits{}, own));
}

TEST(Loader, StepDownMatchesFirstOrderLagOracle) {
  // target steps from 8.33 to 2.78 m/s at t=0; k=1/s, clamp 3 m/s^2
  const double hi = 30 / 3.6, lo = 10 / 3.6;
  const TimedTrajectory tt({{{0, 0}, -1.0}, {{hi, 0}, 0.0}, {{hi + lo * 20, 0}, 20.0}});
  const FeedbackParams fb;
  auto loader = load_prescription(tt, fb, hi);
  EXPECT_NEAR(loader.target_speed(1.0), lo, 1e-12);

  const double dt = 1e-3;
  double v = hi;
  // oracle: saturated at -3 until the error falls to 3/k, exponential after
  const double t_sat = ((hi - lo) - fb.max_decel / fb.gain) / fb.max_decel;
  auto oracle = [&](double t) {
    if (t <= t_sat) return hi - fb.max_decel * t;
    return lo + (fb.max_decel / fb.gain) * std::exp(-fb.gain * (t - t_sat));
  };
  double worst_err = 0, min_v = hi;
  std::optional<double> settled;
  for (long k = 0; k < 10000; ++k) {
    const double t = k * dt;
    worst_err = std::max(worst_err, std::abs(v - oracle(t)));
    min_v = std::min(min_v, v);
    if (!settled && std::abs(v - lo) <= 0.05 * (hi - lo)) settled = t;
    v += loader.command(t, v) * dt;
  }
  EXPECT_LT(worst_err, 5e-3);
  EXPECT_GE(min_v, lo - 0.02 * (hi - lo));  // no overshoot beyond 2%
  ASSERT_TRUE(settled);
  // oracle settling time for the 5% band; with k=1 this is about 3.2 s
  const double t_settle = t_sat + std::log((fb.max_decel / fb.gain) / (0.05 * (hi - lo))) / fb.gain;
  EXPECT_NEAR(*settled, t_settle, 0.01);
}

TEST(Loader, ZeroCommandAtEqualSpeedAndAbortReverts) {
  const auto tt = straight(0, 0, 8, 0, 100, 2.0);
  auto loader = load_prescription(tt, FeedbackParams{}, 11.0);
  for (double t = 0; t < 20; t += 0.37) EXPECT_NEAR(loader.command(t, 8.0), 0.0, 1e-9);
  loader.abort();
  EXPECT_TRUE(loader.aborted());
  EXPECT_DOUBLE_EQ(loader.target_speed(5.0), 11.0);
  EXPECT_GT(loader.command(5.0, 8.0), 0.0);
  EXPECT_LE(loader.command(5.0, 0.0), FeedbackParams{}.max_accel);
}

TEST(Schedule, LastChangeTime) {
  const auto rtt = straight(0, 0, 8, 0, 300);
  const auto out = generate_prescribed(rtt, 8, 0, PrescriptionParams{}, 0.0);
  EXPECT_NEAR(SpeedSchedule(out).last_change_time(), 2.0 + 3.6, 1e-9);
}
