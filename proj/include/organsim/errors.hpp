#pragma once

#include <stdexcept>
#include <string>

namespace organsim {

// Base of every error the library raises on purpose. `exit_code()` maps onto
// the CLI convention: 1 for input/validation problems, 2 for runtime failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

// A patient record that cannot be ingested (non-finite value, missing statics,
// unknown indicator, ...).
class InvalidRecord : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RenderError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RunRejected : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EditRejected : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NotFound : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RetryableBackendError : public Error {
 public:
  using Error::Error;
};

class CacheMiss : public Error {
 public:
  using Error::Error;
};

class CorruptRun : public Error {
 public:
  using Error::Error;
};

}  // namespace organsim
