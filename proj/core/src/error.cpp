#include "heartsway/error.hpp"

namespace heartsway {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::NonPositiveBpm: return "NonPositiveBpm";
    case ErrorCode::NonMonotonicTime: return "NonMonotonicTime";
    case ErrorCode::SeriesTooShort: return "SeriesTooShort";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::SessionAlreadyLive: return "SessionAlreadyLive";
    case ErrorCode::SessionNotLive: return "SessionNotLive";
    case ErrorCode::SessionNotFound: return "SessionNotFound";
    case ErrorCode::SessionPurged: return "SessionPurged";
    case ErrorCode::StoreLocked: return "StoreLocked";
    case ErrorCode::StoreCorrupt: return "StoreCorrupt";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::NackReceived: return "NackReceived";
    case ErrorCode::LinkClosed: return "LinkClosed";
    case ErrorCode::BackendClosed: return "BackendClosed";
    case ErrorCode::InvalidScript: return "InvalidScript";
    case ErrorCode::DeviceOpenFailed: return "DeviceOpenFailed";
    case ErrorCode::UnknownCue: return "UnknownCue";
    case ErrorCode::InvalidPhase: return "InvalidPhase";
    case ErrorCode::EngineUnavailable: return "EngineUnavailable";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace heartsway
