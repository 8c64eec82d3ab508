#pragma once

#include <stdexcept>
#include <string>

namespace bidc {

// Error categories map onto CLI exit codes: ConfigError -> 1, DataError -> 2,
// NumericError -> 3.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Operand shape disagreement. Messages always name both shapes.
struct ShapeError : NumericError {
    explicit ShapeError(const std::string& what) : NumericError(what) {}
};

}  // namespace bidc
