// Exception taxonomy shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace disent {

// Bad user-supplied configuration (unknown key, out-of-range value, wrong mode).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid arguments to a library operation (factor ranges, shape mismatches).
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Filesystem / serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training loop hits a non-finite loss; carries the step number.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(long step, const std::string& msg)
      : std::runtime_error("step " + std::to_string(step) + ": " + msg), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace disent
