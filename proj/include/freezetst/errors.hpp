#pragma once

#include <stdexcept>
#include <string>

namespace freezetst {

/// Shape or dimension mismatch between tensor operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (bad field, out-of-range hyperparameter).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Non-finite value produced during computation (NaN/Inf).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A guaranteed property failed to hold (frozen weights drifted, a bound was
/// violated, a required preparation step is missing).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the offending location.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, long row, long col)
        : std::runtime_error(msg + " (row " + std::to_string(row) + ", column " +
                             std::to_string(col) + ")"),
          row(row),
          col(col) {}
    long row;
    long col;
};

}  // namespace freezetst
