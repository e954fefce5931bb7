#ifndef DUALCOG_ERRORS_HPP_
#define DUALCOG_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dualcog {

// Every error thrown by the library derives from Error so callers (the CLI in
// particular) can map the category to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on a value in the wrong state (e.g. serializing an
// unparsed trajectory).
class StateError : public Error {
 public:
  using Error::Error;
};

// Policy kind lacks the requested capability (Tabular has no hidden states).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage failed; what() is prefixed with "stage: <name>".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error("stage: " + stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dualcog

#endif  // DUALCOG_ERRORS_HPP_
