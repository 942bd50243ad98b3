#pragma once

#include <stdexcept>
#include <string>

namespace ccdl {

// Error taxonomy maps onto the CLI exit codes: bad parameters/dimensions -> 2,
// I/O and file-format problems -> 3, numerical aborts -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ParameterError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct FormatError : IoError {
    using IoError::IoError;
};

struct NumericalError : Error {
    using Error::Error;
};

} // namespace ccdl
