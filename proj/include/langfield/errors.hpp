#pragma once

#include <stdexcept>
#include <string>

namespace langfield {

/// Malformed or inconsistent input data (bad magic, truncated file, invariant violation).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unsupported option.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Arguments whose shapes or dimensions do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values produced during a numerical stage.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace langfield
