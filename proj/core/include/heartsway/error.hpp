#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace heartsway {

enum class ErrorCode {
  // signal
  EmptySeries,
  NonPositiveBpm,
  NonMonotonicTime,
  SeriesTooShort,
  InvalidParams,
  // tracestore
  SessionAlreadyLive,
  SessionNotLive,
  SessionNotFound,
  SessionPurged,
  StoreLocked,
  StoreCorrupt,
  // wire
  PayloadTooLarge,
  Timeout,
  NackReceived,
  LinkClosed,
  // device
  BackendClosed,
  InvalidScript,
  DeviceOpenFailed,
  // session / api
  UnknownCue,
  InvalidPhase,
  EngineUnavailable,
  // config / cli
  ConfigInvalid,
  ParseError,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure the library reports carries a code so callers (CLI exit
// codes, HTTP status mapping, tests) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace heartsway
