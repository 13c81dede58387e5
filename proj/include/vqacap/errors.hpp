#pragma once

#include <stdexcept>
#include <string>

namespace vqacap {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the source location (file, line or byte
// offset) in the message.
struct ParseError : Error {
    using Error::Error;
};

// A required id (record, image, annotation) is absent from an input.
struct CoverageError : Error {
    using Error::Error;
};

// Completion-service failures, split by how callers should react.
struct ServiceError : Error {
    using Error::Error;
};

// Transient (timeouts, 429/5xx, dropped connections): retrying may succeed.
struct RetryableError : ServiceError {
    using ServiceError::ServiceError;
};

// Permanent (bad credentials, quota, invalid request): retrying cannot help.
struct FatalServiceError : ServiceError {
    using ServiceError::ServiceError;
};

// The service answered but the payload violates the wire contract.
struct ProtocolError : ServiceError {
    using ServiceError::ServiceError;
};

}  // namespace vqacap
