#pragma once

#include <stdexcept>
#include <string>

namespace normlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, arities or graph wiring that cannot be evaluated.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A NaN (or other forbidden value) appeared during evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input sits on a singular point of the operation (zero norm, zero output).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration; the CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace normlab
