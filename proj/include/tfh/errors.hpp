#pragma once

#include <stdexcept>

namespace tfh {

class InitializationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when the number of events reaches the configured cap.
class ZenoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tfh
