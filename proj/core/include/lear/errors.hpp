#pragma once

#include <stdexcept>
#include <string>

namespace lear {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// bad caller-supplied value (index out of range, alpha outside [0,1], ...)
struct ArgumentError : Error {
  using Error::Error;
};

// tensor shape does not satisfy an operation's contract
struct ShapeError : Error {
  using Error::Error;
};

// malformed or inconsistent configuration
struct ConfigError : Error {
  using Error::Error;
};

// unreadable, malformed, or missing input data
struct DataError : Error {
  using Error::Error;
};

// operation undefined for the given model/inputs (e.g. CAM on an FC head)
struct UnsupportedError : Error {
  using Error::Error;
};

// training produced a non-finite loss
struct DivergenceError : Error {
  using Error::Error;
};

// a stage was invoked before its prerequisite checkpoint exists
struct MissingCheckpointError : Error {
  using Error::Error;
};

// evaluation inputs could not be paired by id
struct UnmatchedIdsError : Error {
  using Error::Error;
};

// metric undefined for the given operands (e.g. NCC of a constant array)
struct UndefinedScoreError : Error {
  using Error::Error;
};

}  // namespace lear
