#pragma once

#include <stdexcept>
#include <string>

namespace dualfb {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StaleIndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Adapter failures are retryable (transient transport problems) or hard
/// (exhausted retries, unrecoverable parse failures).
struct AdapterError : std::runtime_error {
  bool retryable;
  explicit AdapterError(const std::string& msg, bool retryable_ = false)
      : std::runtime_error(msg), retryable(retryable_) {}
};

struct ParseError : AdapterError {
  explicit ParseError(const std::string& msg) : AdapterError(msg, true) {}
};

}  // namespace dualfb
