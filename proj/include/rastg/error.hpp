#pragma once

#include <stdexcept>
#include <string>

namespace rastg {

// Base for all library errors. Subclasses map to CLI exit codes:
// ConfigError -> 2, DataError/ShapeError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, unknown variant, invalid CLI usage.
struct ConfigError : Error {
    using Error::Error;
};

// File format violations, schema errors, dangling references.
struct DataError : Error {
    using Error::Error;
};

// Dimension/shape contract violations between arrays or model parts.
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf leaks, degenerate degrees, diverged optimization.
struct NumericError : Error {
    using Error::Error;
};

} // namespace rastg
