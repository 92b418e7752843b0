#pragma once

#include <stdexcept>
#include <string>

namespace ofp {

// Base for every error the library raises.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// A NaN or Inf appeared in a tensor, loss or gradient.
struct NonFiniteError : Error {
  using Error::Error;
};

// Malformed input file (dataset, checkpoint, PNP, config).
struct FormatError : Error {
  using Error::Error;
};

// Pipeline stages executed out of order or with missing prerequisites.
struct StageError : Error {
  using Error::Error;
};

}  // namespace ofp
