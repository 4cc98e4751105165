#pragma once

#include <stdexcept>
#include <string>

namespace tgpt {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or usage (bad flag, bad config value, unknown key).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data that cannot be accepted (parse failures, gaps under a strict policy, short series).
class DataError : public Error {
public:
    using Error::Error;
};

/// Corrupt, truncated or incompatible checkpoint file.
class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

/// Incompatible tensor shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A NaN or infinity appeared in a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace tgpt
