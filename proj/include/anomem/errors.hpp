#pragma once

#include <stdexcept>
#include <string>

namespace anomem {

// Error taxonomy used across the library. CLI maps validation-type errors to
// exit code 1 and runtime-type errors to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Bad argument values, config fields, or protocol parameters.
struct ValidationError : Error {
  using Error::Error;
};

// Non-finite values, failed numeric preconditions.
struct NumericError : Error {
  using Error::Error;
};

// API misuse: consumed tape, missing gradient, wrong lifecycle order.
struct StateError : Error {
  using Error::Error;
};

// Malformed files: bad magic, truncation, checksum mismatch.
struct FormatError : Error {
  using Error::Error;
};

}  // namespace anomem
