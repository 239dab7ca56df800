#pragma once

#include <stdexcept>
#include <string>

namespace schemadapt {

// Every error raised by the library derives from Error. `exit_code()` is the
// process status the CLI reports for it: 1 for invalid input, 2 for failures
// that happen while running a valid request.
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

// Malformed documents. The message carries line and/or field context.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Incompatible tensor shapes handed to a differentiable op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/inf in activations or losses, or an op evaluated outside its domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Embedding service failures after retries. `status()` is the last HTTP status
// observed, or 0 when the transport itself failed.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

// A row that must stay unseen took part in a gradient step.
class LeakageError : public Error {
 public:
  using Error::Error;
};

}  // namespace schemadapt
