#pragma once

#include <stdexcept>
#include <string>

namespace advsyn {

// Error taxonomy, mapped to CLI exit codes in tools/advsyn.cpp:
//   ConfigError  -> 2   (bad configuration or invalid arguments)
//   DataError    -> 3   (missing/corrupt files, malformed datasets)
//   NumericError -> 4   (divergence: NaN/Inf where finite values are required)
// ShapeError signals an incompatible tensor shape and is treated as a
// validation failure (exit 2) when it escapes to the CLI.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

}  // namespace advsyn
