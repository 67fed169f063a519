#include "heartsway/link.hpp"

#include <fcntl.h>
#include <poll.h>
#include <termios.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstring>

#include "heartsway/error.hpp"

namespace heartsway::wire {

FdLink::FdLink(int fd) : fd_(fd) {}

FdLink::~FdLink() {
  if (fd_ >= 0) ::close(fd_);
}

void FdLink::send(std::span<const std::uint8_t> frame) {
  std::size_t done = 0;
  while (done < frame.size()) {
    const ssize_t n = ::write(fd_, frame.data() + done, frame.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN) {
        pollfd p{fd_, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      throw Error(ErrorCode::LinkClosed, std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::optional<Decoded> FdLink::receive(std::chrono::milliseconds timeout) {
  using steady = std::chrono::steady_clock;
  const auto deadline = steady::now() + timeout;
  while (ready_.empty()) {
    // a spent (or zero) timeout still gets one non-blocking look
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - steady::now());
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(left.count(), 0)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::LinkClosed, std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) return std::nullopt;
    std::uint8_t buf[256];
    const ssize_t n = ::read(fd_, buf, sizeof buf);
    if (n == 0) throw Error(ErrorCode::LinkClosed, "peer closed the link");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(ErrorCode::LinkClosed, std::string("read failed: ") + std::strerror(errno));
    }
    for (auto& r : decoder_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)))) {
      if (auto* d = std::get_if<Decoded>(&r)) {
        ready_.push_back(std::move(*d));
      } else {
        ++errors_;
      }
    }
  }
  Decoded out = std::move(ready_.front());
  ready_.pop_front();
  return out;
}

namespace {

speed_t baud_constant(int baud) {
  switch (baud) {
    case 9600: return B9600;
    case 19200: return B19200;
    case 38400: return B38400;
    case 57600: return B57600;
    case 115200: return B115200;
    case 230400: return B230400;
    default: return 0;
  }
}

}  // namespace

int open_serial_port(const std::string& path, int baud) {
  const speed_t speed = baud_constant(baud);
  if (speed == 0) throw Error(ErrorCode::DeviceOpenFailed, "unsupported baud rate " + std::to_string(baud));
  const int fd = ::open(path.c_str(), O_RDWR | O_NOCTTY | O_CLOEXEC);
  if (fd < 0) {
    throw Error(ErrorCode::DeviceOpenFailed, "cannot open " + path + ": " + std::strerror(errno));
  }
  termios tio{};
  if (::tcgetattr(fd, &tio) != 0) {
    ::close(fd);
    throw Error(ErrorCode::DeviceOpenFailed, path + " is not a serial device");
  }
  ::cfmakeraw(&tio);
  tio.c_cflag |= CLOCAL | CREAD;
  tio.c_cflag &= ~(PARENB | CSTOPB | CSIZE);
  tio.c_cflag |= CS8;
  tio.c_cc[VMIN] = 0;
  tio.c_cc[VTIME] = 0;
  ::cfsetispeed(&tio, speed);
  ::cfsetospeed(&tio, speed);
  if (::tcsetattr(fd, TCSANOW, &tio) != 0) {
    ::close(fd);
    throw Error(ErrorCode::DeviceOpenFailed, "cannot configure " + path);
  }
  return fd;
}

}  // namespace heartsway::wire
