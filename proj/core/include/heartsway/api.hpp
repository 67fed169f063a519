#pragma once

// HTTP surface over a running engine.
//
//   GET  /status                 snapshot document (application/json)
//   GET  /events                 text/event-stream, one event per message;
//                                ?from_seq=N or Last-Event-ID to resume,
//                                ?follow=false to return the backlog and close
//   POST /command                {"type":"AckCue","id":N} |
//                                {"type":"OverridePresence","state":"Occupied"|"Vacant"|"Clear"} |
//                                {"type":"LoadSeedTrace","path":"..."} | {"type":"Shutdown"}

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "heartsway/engine.hpp"
#include "heartsway/events.hpp"

namespace heartsway::api {

struct ApiOptions {
  std::string host = "127.0.0.1";
  int port = 8787;  // 0 picks a free port
  std::chrono::milliseconds command_timeout{2000};
  std::chrono::milliseconds keepalive{5000};
};

class ApiServer {
 public:
  /// `engine` may be null: /status and /command then answer 503.
  ApiServer(session::Engine* engine, EventBus& bus, ApiOptions options = {});
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and starts serving on a background thread. Returns the bound
  /// port. Throws Error(Io) when the address cannot be bound.
  int start();
  void stop();
  int port() const noexcept { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace heartsway::api
