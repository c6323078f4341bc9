#pragma once

#include <stdexcept>
#include <string>

namespace ibnn {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch detected before any computation runs.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite values or other numeric failure.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed file contents (IDX, checkpoint).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Inconsistent or missing data (count mismatch, empty dataset, missing path).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration (bad key, K not dividing B, out-of-range value).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace ibnn
