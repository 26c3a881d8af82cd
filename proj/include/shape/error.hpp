#pragma once

#include <stdexcept>
#include <string>

namespace shape {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatchError : Error {
  explicit ShapeMismatchError(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& msg) : Error("non-finite value: " + msg) {}
};

struct BudgetExhaustedError : Error {
  explicit BudgetExhaustedError(const std::string& msg) : Error("budget exhausted: " + msg) {}
};

struct SingularConfigError : Error {
  explicit SingularConfigError(const std::string& msg) : Error("singular configuration: " + msg) {}
};

struct IntegrationDivergedError : Error {
  explicit IntegrationDivergedError(const std::string& msg) : Error("integration diverged: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace shape
