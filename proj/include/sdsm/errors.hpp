#pragma once

#include <stdexcept>
#include <string>

namespace sdsm {

// Every error raised by the library derives from Error. The CLI maps the
// three families below onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration or bad arguments (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad or insufficient data (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

// Numerical breakdown (exit code 4).
class NumericalError : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class InvalidAllocation : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class BlockOutOfBounds : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class UnsupportedKernel : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class NonStationaryTrueModel : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class DimensionMismatch : public DataError {
public:
    using DataError::DataError;
};

class InsufficientData : public DataError {
public:
    using DataError::DataError;
};

class TooFewSamples : public DataError {
public:
    using DataError::DataError;
};

class NotPositiveDefinite : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace sdsm
