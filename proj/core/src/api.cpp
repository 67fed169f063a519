#include "heartsway/api.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

namespace heartsway::api {

using json = nlohmann::ordered_json;

namespace {

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_header("Cache-Control", "no-store");
  res.set_content(body, "application/json");
}

std::string error_body(std::string_view code, const std::string& message) {
  json j;
  j["accepted"] = false;
  j["error"] = code;
  j["message"] = message;
  return j.dump();
}

std::string sse_frame(const ApiEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + std::string(to_string(e.kind)) + "\ndata: " + to_json(e) +
         "\n\n";
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownCue: return 404;
    case ErrorCode::InvalidPhase: return 409;
    case ErrorCode::ParseError: return 400;
    case ErrorCode::EngineUnavailable: return 503;
    default: return 422;
  }
}

}  // namespace

struct ApiServer::Impl {
  session::Engine* engine;
  EventBus& bus;
  ApiOptions options;
  httplib::Server server;
  std::thread thread;

  Impl(session::Engine* e, EventBus& b, ApiOptions o) : engine(e), bus(b), options(std::move(o)) {}

  void routes() {
    // httplib's default adds SO_REUSEPORT, which would let a second daemon
    // share the port silently
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    server.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
      if (!engine) {
        send_json(res, 503, error_body("EngineUnavailable", "engine is not running"));
        return;
      }
      send_json(res, 200, session::to_json(engine->snapshot()));
    });

    server.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t from = bus.last_seq() + 1;
      try {
        if (req.has_param("from_seq")) {
          from = std::stoull(req.get_param_value("from_seq"));
        } else if (req.has_header("Last-Event-ID")) {
          from = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
        }
      } catch (const std::exception&) {
        send_json(res, 400, error_body("ParseError", "from_seq must be a non-negative integer"));
        return;
      }
      res.set_header("Cache-Control", "no-store");
      if (req.has_param("follow") && req.get_param_value("follow") == "false") {
        std::string body;
        for (const auto& e : bus.since(from)) body += sse_frame(e);
        res.set_content(body, "text/event-stream");
        return;
      }
      auto next = std::make_shared<std::uint64_t>(from);
      res.set_chunked_content_provider("text/event-stream", [this, next](std::size_t, httplib::DataSink& sink) {
        if (bus.closed()) {
          for (const auto& e : bus.since(*next)) {
            const auto frame = sse_frame(e);
            if (!sink.write(frame.data(), frame.size())) return false;
          }
          sink.done();
          return true;
        }
        const auto events = bus.wait(*next, options.keepalive);
        if (events.empty()) {
          static const std::string ping = ": keepalive\n\n";
          return sink.write(ping.data(), ping.size());
        }
        for (const auto& e : events) {
          const auto frame = sse_frame(e);
          if (!sink.write(frame.data(), frame.size())) return false;
          *next = e.seq + 1;
        }
        return true;
      });
    });

    server.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
      if (!engine) {
        send_json(res, 503, error_body("EngineUnavailable", "engine is not running"));
        return;
      }
      session::Command cmd;
      try {
        cmd = session::parse_command(req.body);
      } catch (const Error& e) {
        send_json(res, 400, error_body(to_string(e.code()), e.what()));
        return;
      }
      auto fut = engine->submit(std::move(cmd));
      if (fut.wait_for(options.command_timeout) != std::future_status::ready) {
        send_json(res, 503, error_body("EngineUnavailable", "engine did not take the command"));
        return;
      }
      const auto r = fut.get();
      if (!r.accepted) {
        const auto code = r.error.value_or(ErrorCode::InvalidPhase);
        send_json(res, status_for(code), error_body(to_string(code), r.message));
        return;
      }
      json j;
      j["accepted"] = true;
      j["message"] = r.message;
      send_json(res, 200, j.dump());
    });
  }
};

ApiServer::ApiServer(session::Engine* engine, EventBus& bus, ApiOptions options)
    : impl_(std::make_unique<Impl>(engine, bus, std::move(options))) {
  impl_->routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start() {
  auto& s = impl_->server;
  if (impl_->options.port == 0) {
    port_ = s.bind_to_any_port(impl_->options.host);
  } else {
    port_ = s.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
  }
  if (port_ <= 0) {
    throw Error(ErrorCode::Io,
                "cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  // a stop() that lands before the accept loop starts would be lost
  s.wait_until_ready();
  return port_;
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->bus.close();
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace heartsway::api
