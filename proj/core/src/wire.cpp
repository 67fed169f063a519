#include "heartsway/wire.hpp"

#include <algorithm>
#include <string>

#include "heartsway/error.hpp"

namespace heartsway::wire {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v & 0xFFFF));
    u16(static_cast<std::uint16_t>(v >> 16));
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return in_[pos_++]; }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (static_cast<std::uint16_t>(u8()) << 8));
  }
  std::uint32_t u32() {
    const std::uint32_t lo = u16();
    return lo | (static_cast<std::uint32_t>(u16()) << 16);
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct PayloadEncoder {
  Writer& w;
  void operator()(const BpmReport& m) const {
    w.u32(m.t_rel_ms);
    w.u16(m.bpm_x10);
  }
  void operator()(const StretchReport& m) const {
    w.u32(m.t_rel_ms);
    w.u16(m.value);
  }
  void operator()(const DistanceReport& m) const { w.u16(m.cm); }
  void operator()(const SchedulePage& m) const {
    if (m.offsets.size() > kMaxPageOffsets) {
      throw Error(ErrorCode::PayloadTooLarge,
                  "schedule page holds " + std::to_string(m.offsets.size()) + " offsets, limit " +
                      std::to_string(kMaxPageOffsets));
    }
    w.u8(static_cast<std::uint8_t>(m.kind));
    w.u16(m.page_index);
    w.u16(m.total_pages);
    w.u8(static_cast<std::uint8_t>(m.offsets.size()));
    for (auto o : m.offsets) w.u32(o);
  }
  void operator()(const Vibrate& m) const {
    w.u8(m.strength_255);
    w.u16(m.duration_ms);
  }
  void operator()(const Swing&) const {}
  void operator()(const Start&) const {}
  void operator()(const Stop&) const {}
  void operator()(const Ack&) const {}
  void operator()(const Nack& m) const { w.u8(m.reason); }
};

constexpr std::size_t kPageHeader = 6;

// Payload parse for a known type. Returns BadLength for sizes the type
// cannot have.
DecodeResult parse_payload(MsgType type, std::uint8_t seq, std::span<const std::uint8_t> p) {
  auto need = [&](std::size_t n) { return p.size() == n; };
  Reader r(p);
  switch (type) {
    case MsgType::BpmReport: {
      if (!need(6)) return DecodeError::BadLength;
      BpmReport m;
      m.t_rel_ms = r.u32();
      m.bpm_x10 = r.u16();
      return Decoded{m, seq};
    }
    case MsgType::StretchReport: {
      if (!need(6)) return DecodeError::BadLength;
      StretchReport m;
      m.t_rel_ms = r.u32();
      m.value = r.u16();
      return Decoded{m, seq};
    }
    case MsgType::DistanceReport: {
      if (!need(2)) return DecodeError::BadLength;
      return Decoded{DistanceReport{r.u16()}, seq};
    }
    case MsgType::SchedulePage: {
      if (p.size() < kPageHeader) return DecodeError::BadLength;
      SchedulePage m;
      const std::uint8_t kind = r.u8();
      if (kind > 1) return DecodeError::BadLength;
      m.kind = static_cast<PageKind>(kind);
      m.page_index = r.u16();
      m.total_pages = r.u16();
      const std::size_t count = r.u8();
      if (count > kMaxPageOffsets || p.size() != kPageHeader + 4 * count) return DecodeError::BadLength;
      m.offsets.reserve(count);
      for (std::size_t i = 0; i < count; ++i) m.offsets.push_back(r.u32());
      return Decoded{std::move(m), seq};
    }
    case MsgType::Vibrate: {
      if (!need(3)) return DecodeError::BadLength;
      Vibrate m;
      m.strength_255 = r.u8();
      m.duration_ms = r.u16();
      return Decoded{m, seq};
    }
    case MsgType::Swing:
      if (!need(0)) return DecodeError::BadLength;
      return Decoded{Swing{}, seq};
    case MsgType::Start:
      if (!need(0)) return DecodeError::BadLength;
      return Decoded{Start{}, seq};
    case MsgType::Stop:
      if (!need(0)) return DecodeError::BadLength;
      return Decoded{Stop{}, seq};
    case MsgType::Ack:
      if (!need(0)) return DecodeError::BadLength;
      return Decoded{Ack{seq}, seq};
    case MsgType::Nack:
      if (!need(1)) return DecodeError::BadLength;
      return Decoded{Nack{seq, r.u8()}, seq};
  }
  return DecodeError::UnknownType;
}

bool known_type(std::uint8_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::BpmReport:
    case MsgType::StretchReport:
    case MsgType::DistanceReport:
    case MsgType::SchedulePage:
    case MsgType::Vibrate:
    case MsgType::Swing:
    case MsgType::Start:
    case MsgType::Stop:
    case MsgType::Ack:
    case MsgType::Nack:
      return true;
  }
  return false;
}

// Decodes the frame at the start of `bytes` (which begins with a sync byte).
// On success or a definite error, `consumed` is the frame length; a
// Truncated result means more bytes are needed.
DecodeResult decode_prefix(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
  consumed = 0;
  if (bytes.size() < kHeaderSize) return DecodeError::Truncated;
  const std::size_t len = bytes[3];
  if (len > kMaxPayload) {
    consumed = kHeaderSize;
    return DecodeError::BadLength;
  }
  const std::size_t total = kHeaderSize + len + 1;
  if (bytes.size() < total) return DecodeError::Truncated;
  consumed = total;
  if (checksum(bytes.subspan(1, kHeaderSize - 1 + len)) != bytes[total - 1]) {
    return DecodeError::BadChecksum;
  }
  if (!known_type(bytes[1])) return DecodeError::UnknownType;
  return parse_payload(static_cast<MsgType>(bytes[1]), bytes[2], bytes.subspan(kHeaderSize, len));
}

}  // namespace

MsgType type_of(const Message& msg) noexcept {
  static constexpr MsgType kTypes[] = {MsgType::BpmReport,  MsgType::StretchReport, MsgType::DistanceReport,
                                       MsgType::SchedulePage, MsgType::Vibrate,     MsgType::Swing,
                                       MsgType::Start,        MsgType::Stop,        MsgType::Ack,
                                       MsgType::Nack};
  return kTypes[msg.index()];
}

std::string_view to_string(MsgType type) noexcept {
  switch (type) {
    case MsgType::BpmReport: return "BpmReport";
    case MsgType::StretchReport: return "StretchReport";
    case MsgType::DistanceReport: return "DistanceReport";
    case MsgType::SchedulePage: return "SchedulePage";
    case MsgType::Vibrate: return "Vibrate";
    case MsgType::Swing: return "Swing";
    case MsgType::Start: return "Start";
    case MsgType::Stop: return "Stop";
    case MsgType::Ack: return "Ack";
    case MsgType::Nack: return "Nack";
  }
  return "?";
}

std::string_view to_string(DecodeError e) noexcept {
  switch (e) {
    case DecodeError::NoSync: return "NoSync";
    case DecodeError::Truncated: return "Truncated";
    case DecodeError::BadChecksum: return "BadChecksum";
    case DecodeError::UnknownType: return "UnknownType";
    case DecodeError::BadLength: return "BadLength";
    case DecodeError::TrailingBytes: return "TrailingBytes";
  }
  return "?";
}

std::uint8_t checksum(std::span<const std::uint8_t> bytes) noexcept {
  std::uint8_t x = 0;
  for (auto b : bytes) x ^= b;
  return x;
}

std::vector<std::uint8_t> encode(const Message& msg, std::uint8_t seq) {
  if (const auto* ack = std::get_if<Ack>(&msg)) seq = ack->seq;
  if (const auto* nack = std::get_if<Nack>(&msg)) seq = nack->seq;

  Writer payload;
  std::visit(PayloadEncoder{payload}, msg);
  const auto& body = payload.bytes();
  if (body.size() > kMaxPayload) {
    throw Error(ErrorCode::PayloadTooLarge,
                std::to_string(body.size()) + "-byte payload exceeds " + std::to_string(kMaxPayload));
  }

  std::vector<std::uint8_t> frame;
  frame.reserve(kHeaderSize + body.size() + 1);
  frame.push_back(kSync);
  frame.push_back(static_cast<std::uint8_t>(type_of(msg)));
  frame.push_back(seq);
  frame.push_back(static_cast<std::uint8_t>(body.size()));
  frame.insert(frame.end(), body.begin(), body.end());
  frame.push_back(checksum(std::span(frame).subspan(1)));
  return frame;
}

DecodeResult decode(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return DecodeError::Truncated;
  if (bytes[0] != kSync) return DecodeError::NoSync;
  std::size_t consumed = 0;
  auto result = decode_prefix(bytes, consumed);
  if (std::holds_alternative<Decoded>(result) && consumed != bytes.size()) {
    return DecodeError::TrailingBytes;
  }
  return result;
}

std::vector<DecodeResult> StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  std::vector<DecodeResult> out;
  std::size_t pos = 0;

  while (pos < buf_.size()) {
    if (buf_[pos] != kSync) {
      ++pos;
      continue;
    }
    const auto view = std::span<const std::uint8_t>(buf_).subspan(pos);
    std::size_t consumed = 0;
    auto result = decode_prefix(view, consumed);
    if (consumed == 0) break;  // need more bytes

    if (std::holds_alternative<Decoded>(result)) {
      out.push_back(std::move(result));
      pos += consumed;
      continue;
    }

    // A short frame swallows the head of its successor, which then fails the
    // checksum. If a later sync inside the span starts a valid frame, the
    // first frame was truncated and decoding resumes there.
    const auto err = std::get<DecodeError>(result);
    std::size_t resume = pos + 1;
    DecodeError reported = err;
    if (err == DecodeError::BadChecksum) {
      for (std::size_t q = 1; q < consumed; ++q) {
        if (view[q] != kSync) continue;
        std::size_t inner = 0;
        if (std::holds_alternative<Decoded>(decode_prefix(view.subspan(q), inner))) {
          reported = DecodeError::Truncated;
          resume = pos + q;
          break;
        }
      }
    }
    out.push_back(reported);
    pos = resume;
  }

  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos));
  return out;
}

std::optional<DecodeError> StreamDecoder::finish() {
  const bool partial = std::find(buf_.begin(), buf_.end(), kSync) != buf_.end();
  buf_.clear();
  if (partial) return DecodeError::Truncated;
  return std::nullopt;
}

std::vector<SchedulePage> schedule_pages(const replay::ReplaySchedule& schedule, std::size_t page_size) {
  if (page_size == 0 || page_size > kMaxPageOffsets) {
    throw Error(ErrorCode::InvalidParams, "page size must be in [1, " + std::to_string(kMaxPageOffsets) + "]");
  }
  std::vector<SchedulePage> out;
  auto add = [&](PageKind kind, const std::vector<TimeMs>& offsets) {
    const auto pages = replay::paginate(offsets, page_size);
    if (pages.empty()) {
      out.push_back({kind, 0, 0, {}});
      return;
    }
    for (const auto& p : pages) {
      SchedulePage page{kind, static_cast<std::uint16_t>(p.index), static_cast<std::uint16_t>(p.total), {}};
      for (auto o : p.offsets) page.offsets.push_back(static_cast<std::uint32_t>(o));
      out.push_back(std::move(page));
    }
  };
  add(PageKind::Beat, schedule.beat_offsets_ms);
  add(PageKind::Swing, schedule.swing_offsets_ms);
  return out;
}

TransferReport transfer_schedule(std::span<const SchedulePage> pages, Link& link, const Clock& clock,
                                 std::uint8_t& seq, const TransferOptions& options,
                                 const std::function<void(const Decoded&)>& other) {
  TransferReport report;
  const TimeMs started = clock.now_ms();
  const TimeMs timeout_ms = options.ack_timeout.count();

  for (const auto& page : pages) {
    const std::uint8_t page_seq = seq;
    const auto frame = encode(page, page_seq);
    bool acked = false;
    bool last_was_nack = false;

    for (int attempt = 0; attempt < options.attempts && !acked; ++attempt) {
      link.send(frame);
      ++report.transmissions;
      if (attempt > 0) ++report.retransmissions;
      last_was_nack = false;

      const TimeMs deadline = clock.now_ms() + timeout_ms;
      while (true) {
        const TimeMs remaining = deadline - clock.now_ms();
        if (remaining <= 0) break;
        auto got = link.receive(std::chrono::milliseconds(remaining));
        if (!got) break;
        if (const auto* ack = std::get_if<Ack>(&got->msg); ack && ack->seq == page_seq) {
          acked = true;
          break;
        }
        if (const auto* nack = std::get_if<Nack>(&got->msg); nack && nack->seq == page_seq) {
          ++report.nacks;
          last_was_nack = true;
          break;
        }
        if (other) other(*got);
      }
    }

    if (!acked) {
      report.elapsed_ms = clock.now_ms() - started;
      if (last_was_nack) {
        throw Error(ErrorCode::NackReceived, "page " + std::to_string(page.page_index) + " rejected " +
                                                 std::to_string(options.attempts) + " times");
      }
      throw Error(ErrorCode::Timeout, "no ack for page " + std::to_string(page.page_index) + " after " +
                                          std::to_string(options.attempts) + " transmissions");
    }
    ++report.pages;
    seq = static_cast<std::uint8_t>(seq + 1);
  }
  report.elapsed_ms = clock.now_ms() - started;
  return report;
}

}  // namespace heartsway::wire
