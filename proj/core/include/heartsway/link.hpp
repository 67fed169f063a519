#pragma once

#include <deque>
#include <string>

#include "heartsway/wire.hpp"

namespace heartsway::wire {

/// Link over a file descriptor (serial tty, pipe, socketpair). Owns the fd.
class FdLink final : public Link {
 public:
  explicit FdLink(int fd);
  ~FdLink() override;
  FdLink(const FdLink&) = delete;
  FdLink& operator=(const FdLink&) = delete;

  void send(std::span<const std::uint8_t> frame) override;
  std::optional<Decoded> receive(std::chrono::milliseconds timeout) override;

  /// Frames that failed to decode since construction.
  std::size_t decode_errors() const noexcept { return errors_; }
  int fd() const noexcept { return fd_; }

 private:
  int fd_;
  StreamDecoder decoder_;
  std::deque<Decoded> ready_;
  std::size_t errors_ = 0;
};

/// Opens a serial device raw 8-N-1 at `baud`. Throws Error(DeviceOpenFailed).
int open_serial_port(const std::string& path, int baud = 115200);

}  // namespace heartsway::wire
