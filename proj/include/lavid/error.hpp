#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lavid {

enum class ErrorCode {
  Io,
  ExtractionFailed,
  NotAVideo,
  EmptyClass,
  AdapterUnavailable,
  TooFewFrames,
  InvalidRequest,
  AuthError,
  RateLimited,
  Timeout,
  ProviderError,
  SchemaViolation,
  InvalidBehavior,
  EmptyRecords,
  RewriteParseFailed,
  BudgetExhausted,
  InsufficientData,
  MissingTruth,
  ConfigError,
  MissingArtifact,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "Io";
    case ErrorCode::ExtractionFailed: return "ExtractionFailed";
    case ErrorCode::NotAVideo: return "NotAVideo";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::AdapterUnavailable: return "AdapterUnavailable";
    case ErrorCode::TooFewFrames: return "TooFewFrames";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InvalidBehavior: return "InvalidBehavior";
    case ErrorCode::EmptyRecords: return "EmptyRecords";
    case ErrorCode::RewriteParseFailed: return "RewriteParseFailed";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

  /// Transient provider failures are retried by the client.
  bool transient() const noexcept {
    return code_ == ErrorCode::RateLimited || code_ == ErrorCode::Timeout ||
           code_ == ErrorCode::ProviderError;
  }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace lavid
