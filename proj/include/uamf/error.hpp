#pragma once

#include <stdexcept>
#include <string>

namespace uamf {

/// Root of every exception the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid model, block, generator or harness configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or out-of-range input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. calling backward() on a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures.
class IoError : public DataError {
public:
    using DataError::DataError;
};

// Checkpoint failures are data errors with distinct types so callers can tell
// them apart.
class CheckpointVersionError : public DataError {
public:
    using DataError::DataError;
};

class CheckpointTruncatedError : public DataError {
public:
    using DataError::DataError;
};

class CheckpointShapeError : public DataError {
public:
    using DataError::DataError;
};

} // namespace uamf
