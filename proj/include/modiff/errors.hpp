#pragma once

#include <stdexcept>
#include <string>

namespace modiff {

// Base class for every error the library raises on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape / dimension mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Bad magic bytes, unsupported version, malformed manifest.
struct FormatError : Error {
  using Error::Error;
};

// Payload carries NaN/Inf or otherwise invalid values.
struct DataError : Error {
  using Error::Error;
};

// File shorter than its header promises, or empty where >= 1 is required.
struct LengthError : Error {
  using Error::Error;
};

// Diffusion step index out of range or mis-ordered.
struct StepError : Error {
  using Error::Error;
};

// Non-finite value produced by a numeric computation.
struct NumericError : Error {
  using Error::Error;
};

// Inconsistent configuration (checkpoint mismatch, empty multimodal set, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem / stream failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace modiff
