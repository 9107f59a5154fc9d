#pragma once

#include <stdexcept>
#include <string>

namespace capsdbn {

// Error taxonomy shared by every module. The CLI maps each kind to a
// distinct exit status and a one-line machine-parseable message.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Invalid shapes, inconsistent hyperparameters, malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// NaN/Inf produced or consumed by a numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

/// API misuse: stale caches, out-of-range labels, empty batches.
class UsageError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "usage"; }
};

/// Filesystem, decoding and checkpoint format problems.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

}  // namespace capsdbn
