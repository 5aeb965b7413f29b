#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpc {

enum class ErrorCode {
  EmptyDocument,
  EmptyQuestion,
  MarkerCollision,
  UnknownTokenizer,
  InvalidParams,
  BackendUnavailable,
  BackendRejected,
  ContextOverflow,
  LogprobsUnsupported,
  DimensionMismatch,
  ZeroVector,
  NonFiniteValue,
  InvalidSampling,
  DescriptionEmpty,
  InvalidDistribution,
  SupportViolation,
  EmptyCompressionPool,
  InvalidConstraint,
  ParseFailure,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::EmptyQuestion: return "EmptyQuestion";
    case ErrorCode::MarkerCollision: return "MarkerCollision";
    case ErrorCode::UnknownTokenizer: return "UnknownTokenizer";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::BackendRejected: return "BackendRejected";
    case ErrorCode::ContextOverflow: return "ContextOverflow";
    case ErrorCode::LogprobsUnsupported: return "LogprobsUnsupported";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::InvalidSampling: return "InvalidSampling";
    case ErrorCode::DescriptionEmpty: return "DescriptionEmpty";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::EmptyCompressionPool: return "EmptyCompressionPool";
    case ErrorCode::InvalidConstraint: return "InvalidConstraint";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Failures caused by a backend (transport, protocol or numerical contract)
/// rather than by the caller's input.
constexpr bool is_backend_failure(ErrorCode code) {
  switch (code) {
    case ErrorCode::BackendUnavailable:
    case ErrorCode::BackendRejected:
    case ErrorCode::ContextOverflow:
    case ErrorCode::LogprobsUnsupported:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::ZeroVector:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::DescriptionEmpty:
    case ErrorCode::InvalidDistribution:
    case ErrorCode::SupportViolation:
      return true;
    default:
      return false;
  }
}

/// Every failure raised by the engine carries a stable code so callers
/// (CLI exit mapping, service status mapping, curation reject reasons) can
/// switch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  bool retryable() const noexcept { return code_ == ErrorCode::BackendUnavailable; }

 private:
  ErrorCode code_;
};

/// Raised when a prompt exceeds a backend's context window.
class ContextOverflowError : public Error {
 public:
  ContextOverflowError(std::size_t window, std::size_t actual)
      : Error(ErrorCode::ContextOverflow,
              "prompt has " + std::to_string(actual) + " tokens, window is " +
                  std::to_string(window) + " (overflow " + std::to_string(actual - window) + ")"),
        window_(window),
        actual_(actual) {}

  std::size_t window() const noexcept { return window_; }
  std::size_t overflow() const noexcept { return actual_ - window_; }

 private:
  std::size_t window_;
  std::size_t actual_;
};

}  // namespace tpc
