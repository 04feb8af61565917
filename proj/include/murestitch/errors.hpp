#pragma once

#include <stdexcept>
#include <string>

namespace murestitch {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input detected before any work starts (CLI exit code 2).
struct ValidationError : Error {
    using Error::Error;
};

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

struct BoundsError : ValidationError {
    using ValidationError::ValidationError;
};

// Inputs that are well-formed but cannot be processed, e.g. an empty
// foreground mask or a singular warp.
struct DataError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace murestitch
