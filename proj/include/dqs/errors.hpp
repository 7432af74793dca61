#pragma once

#include <stdexcept>
#include <string>

namespace dqs {

struct DqsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : DqsError {
  using DqsError::DqsError;
};

struct DomainError : DqsError {
  using DqsError::DqsError;
};

struct NumericError : DqsError {
  using DqsError::DqsError;
};

struct EstimationError : DqsError {
  using DqsError::DqsError;
};

struct NotReadyError : DqsError {
  using DqsError::DqsError;
};

struct ConfigError : DqsError {
  using DqsError::DqsError;
};

struct ChecksumError : DqsError {
  using DqsError::DqsError;
};

struct UnsupportedError : DqsError {
  using DqsError::DqsError;
};

struct IoError : DqsError {
  using DqsError::DqsError;
};

// Raised when a reverse chain produces non-finite values; carries the
// diffusion time at which the chain failed.
struct SamplingError : DqsError {
  double tau;
  SamplingError(const std::string& msg, double tau_) : DqsError(msg), tau(tau_) {}
};

}  // namespace dqs
