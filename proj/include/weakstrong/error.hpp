#pragma once

#include <stdexcept>

namespace weakstrong {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors, or between tensors and model structure.
struct DimensionError : Error {
  using Error::Error;
};

// A parameter, label or weight outside its documented domain.
struct ValueError : Error {
  using Error::Error;
};

// Invalid or inconsistent experiment configuration. CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values or diverging optimization. CLI exit code 3.
struct NumericError : Error {
  using Error::Error;
};

// A self-check or runtime assertion failed. CLI exit code 4.
struct VerificationError : Error {
  using Error::Error;
};

}  // namespace weakstrong
