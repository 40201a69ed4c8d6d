#pragma once

#include <stdexcept>
#include <string>

namespace mtu {

// Root of every error thrown by the library. The CLI maps subclasses to exit
// codes (ConfigError -> 2, everything else numeric -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Gram-Schmidt found a column with no new direction (rank-deficient input).
class DegenerateBasisError : public Error {
 public:
  using Error::Error;
};

// Symmetric matrix is not positive definite.
class CurvatureError : public Error {
 public:
  using Error::Error;
};

class EmptySubsetError : public Error {
 public:
  using Error::Error;
};

// Dense Hessian would exceed the parameter-count guard.
class SizeGuardError : public Error {
 public:
  using Error::Error;
};

// A loss went non-finite during training or unlearning.
class StepSizeError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

// Zero denominator in a UIS relative deviation, or mismatched report cells.
class ReferenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace mtu
