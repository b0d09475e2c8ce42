// Golden-file fixtures, mirrored by testdata/make_golden.py.
#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcm/codec.hpp"

namespace mcm::testing {

inline MessageHeader hdr(StationId sender, StationId target, SeqNum seq, std::uint64_t gen_ms) {
  return {.version = 1, .sender = sender, .target = target, .seq = seq,
          .scenario = Scenario::kLaneChange, .generation_time_ms = gen_ms};
}

inline TimedTrajectory line(int n, double x0, double dx, double y, double t0, double dt) {
  std::vector<TimedPoint> pts;
  for (int k = 0; k < n; ++k) pts.push_back({{x0 + dx * k, y}, t0 + dt * k});
  return TimedTrajectory(std::move(pts));
}

inline McmMessage fixture(const std::string& name) {
  if (name == "advertisement") return {hdr(1, 0, 7, 1000), Advertisement{}};
  if (name == "intention") return {hdr(2, 1, 3, 1020), Intention{line(50, 100, 5, -3.5, 10, 0.5)}};
  if (name == "prescription") return {hdr(1, 2, 0, 2010), Prescription{line(52, 200, 4, -3.5, 20, 0.25)}};
  if (name == "acceptance")
    return {hdr(2, 1, 1, 2040),
            Acceptance{true, TimedTrajectory({{{10, 0}, 1}, {{12.5, 0}, 1.5}, {{15, -0.25}, 2}})}};
  if (name == "fin") return {hdr(1, 2, 0, 14830), Fin{}};
  if (name == "cancel") return {hdr(1, 4, 2, 2010), Cancel{CancelReason::kNotTarget}};
  if (name == "ack") return {hdr(1, 2, 5, 1040), Ack{MessageType::kIntention, 3}};
  if (name == "cam") return {hdr(2, 0, 65535, 123456789012ULL), Cam{{123.5, -3.5}, 8.25, 0.0}};
  throw std::invalid_argument(name);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline const char* const kNames[] = {"advertisement", "intention", "prescription", "acceptance",
                                     "fin", "cancel", "ack", "cam"};

inline std::vector<std::uint8_t> golden_bytes(const std::string& name) {
  return from_hex_dump(read_file(std::string(MCM_TESTDATA) + "/" + name + ".hex"));
}

}  // namespace mcm::testing
