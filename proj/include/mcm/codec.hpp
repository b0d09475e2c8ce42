#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "mcm/geometry.hpp"
#include "mcm/trajectory.hpp"

namespace mcm {

using StationId = std::uint32_t;
using SeqNum = std::uint16_t;

inline constexpr StationId kBroadcast = 0;
inline constexpr std::uint8_t kProtocolVersion = 1;

enum class MessageType : std::uint8_t {
  kAdvertisement = 1,
  kIntention = 2,
  kPrescription = 3,
  kAcceptance = 4,
  kFin = 5,
  kCancel = 6,
  kAck = 7,
  kCam = 8,
};

enum class Scenario : std::uint8_t { kLaneChange = 1 };

enum class CancelReason : std::uint8_t {
  kRefused = 1,
  kCommLoss = 2,
  kScenarioAborted = 3,
  kNotTarget = 4,
};

inline const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::kAdvertisement: return "Advertisement";
    case MessageType::kIntention: return "Intention";
    case MessageType::kPrescription: return "Prescription";
    case MessageType::kAcceptance: return "Acceptance";
    case MessageType::kFin: return "Fin";
    case MessageType::kCancel: return "Cancel";
    case MessageType::kAck: return "Ack";
    case MessageType::kCam: return "Cam";
  }
  return "?";
}

inline const char* to_string(CancelReason r) {
  switch (r) {
    case CancelReason::kRefused: return "Refused";
    case CancelReason::kCommLoss: return "CommLoss";
    case CancelReason::kScenarioAborted: return "ScenarioAborted";
    case CancelReason::kNotTarget: return "NotTarget";
  }
  return "?";
}

inline constexpr bool is_known_type(std::uint8_t code) { return code >= 1 && code <= 8; }

struct MessageHeader {
  std::uint8_t version{kProtocolVersion};
  StationId sender{0};
  StationId target{kBroadcast};
  SeqNum seq{0};
  Scenario scenario{Scenario::kLaneChange};
  std::uint64_t generation_time_ms{0};
  friend bool operator==(const MessageHeader&, const MessageHeader&) = default;
};

struct Advertisement {
  friend bool operator==(const Advertisement&, const Advertisement&) = default;
};
struct Intention {
  TimedTrajectory trajectory;
  friend bool operator==(const Intention&, const Intention&) = default;
};
struct Prescription {
  TimedTrajectory trajectory;
  friend bool operator==(const Prescription&, const Prescription&) = default;
};
struct Acceptance {
  bool accepted{false};
  std::optional<TimedTrajectory> selected_trajectory;  // present when accepted
  friend bool operator==(const Acceptance&, const Acceptance&) = default;
};
struct Fin {
  friend bool operator==(const Fin&, const Fin&) = default;
};
struct Cancel {
  CancelReason reason{CancelReason::kScenarioAborted};
  friend bool operator==(const Cancel&, const Cancel&) = default;
};
struct Ack {
  MessageType acked_type{MessageType::kIntention};
  SeqNum acked_seq{0};
  friend bool operator==(const Ack&, const Ack&) = default;
};
struct Cam {
  Vec2 position;
  double speed{0.0};
  double heading{0.0};  // radians
  friend bool operator==(const Cam&, const Cam&) = default;
};

// Alternative order matches MessageType codes minus one.
using Payload = std::variant<Advertisement, Intention, Prescription, Acceptance, Fin, Cancel, Ack, Cam>;

struct McmMessage {
  MessageHeader header;
  Payload payload;

  MessageType type() const { return static_cast<MessageType>(payload.index() + 1); }

  template <typename T>
  const T* get_if() const {
    return std::get_if<T>(&payload);
  }

  friend bool operator==(const McmMessage&, const McmMessage&) = default;
};

// Addressing and payload rules a message must satisfy before encoding.
inline bool is_valid(const McmMessage& m) {
  if (m.header.version != kProtocolVersion) return false;
  const MessageType t = m.type();
  const bool broadcast = t == MessageType::kAdvertisement || t == MessageType::kCam;
  if (broadcast != (m.header.target == kBroadcast)) return false;
  if (const auto* a = m.get_if<Acceptance>(); a && a->accepted && !a->selected_trajectory) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Wire layout (little-endian):
//   header (21 bytes): type u8, version u8, sender u32, target u32, seq u16,
//                      scenario u8, generation_time u64
//   trajectory block:  count u16, then count x (x f64, y f64, t f64)
//   Acceptance:        accepted u8, trajectory block (count 0 when absent)
//   Cancel:            reason u8
//   Ack:               acked_type u8, acked_seq u16
//   Cam:               x f64, y f64, speed f64, heading f64
// ---------------------------------------------------------------------------

inline constexpr std::size_t kHeaderSize = 21;
inline constexpr std::size_t kPointSize = 24;
inline constexpr std::size_t kCamPayloadSize = 32;

enum class DecodeErrc { kTruncated, kUnknownType, kBadVersion, kBadPayload, kTrailingData };

inline const char* to_string(DecodeErrc e) {
  switch (e) {
    case DecodeErrc::kTruncated: return "Truncated";
    case DecodeErrc::kUnknownType: return "UnknownType";
    case DecodeErrc::kBadVersion: return "BadVersion";
    case DecodeErrc::kBadPayload: return "BadPayload";
    case DecodeErrc::kTrailingData: return "TrailingData";
  }
  return "?";
}

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrc code, std::size_t offset)
      : std::runtime_error(std::string(to_string(code)) + " at byte " + std::to_string(offset)),
        code_(code),
        offset_(offset) {}
  DecodeErrc code() const noexcept { return code_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  DecodeErrc code_;
  std::size_t offset_;
};

namespace detail {

inline std::size_t block_size(std::size_t points) { return 2 + points * kPointSize; }

class Writer {
 public:
  explicit Writer(std::size_t reserve) { buf_.reserve(reserve); }

  template <typename U>
    requires std::is_unsigned_v<U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void block(const TimedTrajectory* tt) {
    if (tt == nullptr) {
      uint(std::uint16_t{0});
      return;
    }
    uint(static_cast<std::uint16_t>(tt->size()));
    for (const auto& p : tt->points()) {
      f64(p.position.x);
      f64(p.position.y);
      f64(p.time);
    }
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  template <typename U>
    requires std::is_unsigned_v<U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{data_[pos_ + i]} << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  // Returns nullopt for an empty block.
  std::optional<TimedTrajectory> block() {
    const std::size_t at = pos_;
    const auto count = uint<std::uint16_t>();
    need(static_cast<std::size_t>(count) * kPointSize);
    if (count == 0) return std::nullopt;
    std::vector<TimedPoint> pts(count);
    for (auto& p : pts) {
      p.position.x = f64();
      p.position.y = f64();
      p.time = f64();
    }
    try {
      return TimedTrajectory(std::move(pts));
    } catch (const TrajectoryError&) {
      throw DecodeError(DecodeErrc::kBadPayload, at);
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw DecodeError(DecodeErrc::kTruncated, pos_);
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_{0};
};

}  // namespace detail

inline std::size_t encoded_size(const McmMessage& m) {
  struct Sizer {
    std::size_t operator()(const Advertisement&) const { return 0; }
    std::size_t operator()(const Intention& p) const { return detail::block_size(p.trajectory.size()); }
    std::size_t operator()(const Prescription& p) const { return detail::block_size(p.trajectory.size()); }
    std::size_t operator()(const Acceptance& p) const {
      return 1 + detail::block_size(p.selected_trajectory ? p.selected_trajectory->size() : 0);
    }
    std::size_t operator()(const Fin&) const { return 0; }
    std::size_t operator()(const Cancel&) const { return 1; }
    std::size_t operator()(const Ack&) const { return 3; }
    std::size_t operator()(const Cam&) const { return kCamPayloadSize; }
  };
  return kHeaderSize + std::visit(Sizer{}, m.payload);
}

inline std::vector<std::uint8_t> encode(const McmMessage& m) {
  detail::Writer w(encoded_size(m));
  const auto& h = m.header;
  w.uint(static_cast<std::uint8_t>(m.type()));
  w.uint(h.version);
  w.uint(h.sender);
  w.uint(h.target);
  w.uint(h.seq);
  w.uint(static_cast<std::uint8_t>(h.scenario));
  w.uint(h.generation_time_ms);

  struct Body {
    detail::Writer& w;
    void operator()(const Advertisement&) const {}
    void operator()(const Intention& p) const { w.block(&p.trajectory); }
    void operator()(const Prescription& p) const { w.block(&p.trajectory); }
    void operator()(const Acceptance& p) const {
      w.uint(static_cast<std::uint8_t>(p.accepted ? 1 : 0));
      w.block(p.selected_trajectory ? &*p.selected_trajectory : nullptr);
    }
    void operator()(const Fin&) const {}
    void operator()(const Cancel& p) const { w.uint(static_cast<std::uint8_t>(p.reason)); }
    void operator()(const Ack& p) const {
      w.uint(static_cast<std::uint8_t>(p.acked_type));
      w.uint(p.acked_seq);
    }
    void operator()(const Cam& p) const {
      w.f64(p.position.x);
      w.f64(p.position.y);
      w.f64(p.speed);
      w.f64(p.heading);
    }
  };
  std::visit(Body{w}, m.payload);
  return w.take();
}

inline McmMessage decode(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  const auto code = r.uint<std::uint8_t>();
  if (!is_known_type(code)) throw DecodeError(DecodeErrc::kUnknownType, 0);
  McmMessage m{.header = {}, .payload = Advertisement{}};
  m.header.version = r.uint<std::uint8_t>();
  if (m.header.version != kProtocolVersion) throw DecodeError(DecodeErrc::kBadVersion, 1);
  m.header.sender = r.uint<std::uint32_t>();
  m.header.target = r.uint<std::uint32_t>();
  m.header.seq = r.uint<std::uint16_t>();
  const std::size_t scenario_at = r.offset();
  const auto scenario = r.uint<std::uint8_t>();
  if (scenario != static_cast<std::uint8_t>(Scenario::kLaneChange)) {
    throw DecodeError(DecodeErrc::kBadPayload, scenario_at);
  }
  m.header.scenario = Scenario::kLaneChange;
  m.header.generation_time_ms = r.uint<std::uint64_t>();

  const std::size_t body_at = r.offset();
  auto required_block = [&] {
    auto tt = r.block();
    if (!tt) throw DecodeError(DecodeErrc::kBadPayload, body_at);
    return std::move(*tt);
  };

  switch (static_cast<MessageType>(code)) {
    case MessageType::kAdvertisement: m.payload = Advertisement{}; break;
    case MessageType::kIntention: m.payload = Intention{required_block()}; break;
    case MessageType::kPrescription: m.payload = Prescription{required_block()}; break;
    case MessageType::kAcceptance: {
      const auto flag = r.uint<std::uint8_t>();
      if (flag > 1) throw DecodeError(DecodeErrc::kBadPayload, body_at);
      Acceptance a{.accepted = flag == 1, .selected_trajectory = r.block()};
      if (a.accepted && !a.selected_trajectory) throw DecodeError(DecodeErrc::kBadPayload, body_at + 1);
      m.payload = std::move(a);
      break;
    }
    case MessageType::kFin: m.payload = Fin{}; break;
    case MessageType::kCancel: {
      const auto reason = r.uint<std::uint8_t>();
      if (reason < 1 || reason > 4) throw DecodeError(DecodeErrc::kBadPayload, body_at);
      m.payload = Cancel{static_cast<CancelReason>(reason)};
      break;
    }
    case MessageType::kAck: {
      const auto acked = r.uint<std::uint8_t>();
      if (!is_known_type(acked)) throw DecodeError(DecodeErrc::kBadPayload, body_at);
      const auto seq = r.uint<std::uint16_t>();
      m.payload = Ack{static_cast<MessageType>(acked), seq};
      break;
    }
    case MessageType::kCam: {
      Cam c;
      c.position.x = r.f64();
      c.position.y = r.f64();
      c.speed = r.f64();
      c.heading = r.f64();
      m.payload = c;
      break;
    }
  }
  if (r.remaining() != 0) throw DecodeError(DecodeErrc::kTrailingData, r.offset());
  return m;
}

// Hex dump used by the golden files: 16 bytes per line, lowercase, space separated.
inline std::string to_hex_dump(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    out += kDigits[bytes[i] >> 4];
    out += kDigits[bytes[i] & 0xF];
    out += ((i + 1) % 16 == 0 || i + 1 == bytes.size()) ? '\n' : ' ';
  }
  return out;
}

// Inverse of to_hex_dump; ignores whitespace and '#' comment lines.
inline std::vector<std::uint8_t> from_hex_dump(std::string_view text) {
  std::vector<std::uint8_t> out;
  int nibble = -1;
  bool comment = false;
  for (char c : text) {
    if (comment) {
      comment = c != '\n';
      continue;
    }
    if (c == '#') {
      comment = true;
      continue;
    }
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    else throw std::invalid_argument(std::string("bad hex character '") + c + "'");
    if (nibble < 0) {
      nibble = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(nibble << 4 | v));
      nibble = -1;
    }
  }
  if (nibble >= 0) throw std::invalid_argument("odd number of hex digits");
  return out;
}

}  // namespace mcm
