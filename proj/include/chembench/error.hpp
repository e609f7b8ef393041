#pragma once

#include <stdexcept>
#include <string>

namespace chembench {

// Bad input or configuration. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// I/O or endpoint failure after the inputs were accepted. Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TemplateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace chembench
