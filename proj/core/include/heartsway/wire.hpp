#pragma once

// Host <-> controller framing.
//
//   [0xAA sync][msg_type][seq][payload_len][payload ...][checksum]
//
// checksum is the XOR of msg_type through the last payload byte. Multi-byte
// integers are little-endian. Ack and Nack carry the acknowledged sequence
// number in the header seq field.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "heartsway/clock.hpp"
#include "heartsway/replay.hpp"

namespace heartsway::wire {

inline constexpr std::uint8_t kSync = 0xAA;
inline constexpr std::size_t kHeaderSize = 4;  // sync, type, seq, len
inline constexpr std::size_t kMaxPayload = 128;
inline constexpr std::size_t kMaxPageOffsets = 30;

enum class MsgType : std::uint8_t {
  BpmReport = 0x01,
  StretchReport = 0x02,
  DistanceReport = 0x03,
  SchedulePage = 0x10,
  Vibrate = 0x20,
  Swing = 0x21,
  Start = 0x30,
  Stop = 0x31,
  Ack = 0x40,
  Nack = 0x41,
};

struct BpmReport {
  std::uint32_t t_rel_ms = 0;
  std::uint16_t bpm_x10 = 0;
  friend bool operator==(const BpmReport&, const BpmReport&) = default;
};
struct StretchReport {
  std::uint32_t t_rel_ms = 0;
  std::uint16_t value = 0;
  friend bool operator==(const StretchReport&, const StretchReport&) = default;
};
struct DistanceReport {
  std::uint16_t cm = 0;
  friend bool operator==(const DistanceReport&, const DistanceReport&) = default;
};

enum class PageKind : std::uint8_t { Beat = 0, Swing = 1 };

/// total_pages == 0 is the explicit "nothing of this kind" notice.
struct SchedulePage {
  PageKind kind = PageKind::Beat;
  std::uint16_t page_index = 0;
  std::uint16_t total_pages = 0;
  std::vector<std::uint32_t> offsets;
  friend bool operator==(const SchedulePage&, const SchedulePage&) = default;
};
struct Vibrate {
  std::uint8_t strength_255 = 0;
  std::uint16_t duration_ms = 0;
  friend bool operator==(const Vibrate&, const Vibrate&) = default;
};
struct Swing {
  friend bool operator==(const Swing&, const Swing&) = default;
};
struct Start {
  friend bool operator==(const Start&, const Start&) = default;
};
struct Stop {
  friend bool operator==(const Stop&, const Stop&) = default;
};
struct Ack {
  std::uint8_t seq = 0;
  friend bool operator==(const Ack&, const Ack&) = default;
};
struct Nack {
  std::uint8_t seq = 0;
  std::uint8_t reason = 0;
  friend bool operator==(const Nack&, const Nack&) = default;
};

using Message = std::variant<BpmReport, StretchReport, DistanceReport, SchedulePage, Vibrate, Swing,
                             Start, Stop, Ack, Nack>;

MsgType type_of(const Message& msg) noexcept;
std::string_view to_string(MsgType type) noexcept;

/// Throws Error(PayloadTooLarge) when the payload exceeds kMaxPayload or a
/// page holds more than kMaxPageOffsets offsets. For Ack/Nack the header seq
/// is the message's own seq and `seq` is ignored.
std::vector<std::uint8_t> encode(const Message& msg, std::uint8_t seq);

std::uint8_t checksum(std::span<const std::uint8_t> bytes) noexcept;

enum class DecodeError {
  NoSync,
  Truncated,
  BadChecksum,
  UnknownType,
  BadLength,
  TrailingBytes,
};
std::string_view to_string(DecodeError e) noexcept;

struct Decoded {
  Message msg;
  std::uint8_t seq = 0;
  friend bool operator==(const Decoded&, const Decoded&) = default;
};

using DecodeResult = std::variant<Decoded, DecodeError>;

/// Decodes exactly one frame occupying the whole buffer.
DecodeResult decode(std::span<const std::uint8_t> bytes);

/// Incremental decoder for a byte stream. After a bad frame it resumes the
/// search at the next sync byte.
class StreamDecoder {
 public:
  std::vector<DecodeResult> feed(std::span<const std::uint8_t> bytes);
  /// Reports a partial frame left in the buffer as Truncated and clears it.
  std::optional<DecodeError> finish();

  std::size_t buffered() const noexcept { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bidirectional frame transport (serial port, socket, test double).
class Link {
 public:
  virtual ~Link() = default;
  virtual void send(std::span<const std::uint8_t> frame) = 0;
  /// Next decoded frame, or nullopt once `timeout` passes without one.
  virtual std::optional<Decoded> receive(std::chrono::milliseconds timeout) = 0;
};

struct TransferOptions {
  std::chrono::milliseconds ack_timeout{500};
  /// Transmissions per page, including the first.
  int attempts = 3;
};

struct TransferReport {
  std::size_t pages = 0;
  std::size_t transmissions = 0;
  std::size_t retransmissions = 0;
  std::size_t nacks = 0;
  TimeMs elapsed_ms = 0;
};

/// Wire pages for both kinds of a schedule. A kind with no offsets becomes a
/// single notice page with total_pages = 0.
std::vector<SchedulePage> schedule_pages(const replay::ReplaySchedule& schedule,
                                         std::size_t page_size = kMaxPageOffsets);

/// Stop-and-wait upload: each page is acknowledged before the next is sent.
/// Throws Error(Timeout) or Error(NackReceived) once a page exhausts its
/// attempts. `seq` is advanced once per page. Frames that are not the awaited
/// Ack/Nack go to `other` when provided.
TransferReport transfer_schedule(std::span<const SchedulePage> pages, Link& link, const Clock& clock,
                                 std::uint8_t& seq, const TransferOptions& options = {},
                                 const std::function<void(const Decoded&)>& other = {});

}  // namespace heartsway::wire
