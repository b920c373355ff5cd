#pragma once

#include <stdexcept>
#include <string>

namespace amlora {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input data outside its admissible domain (labels, token ids).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// API called with arguments that violate its contract.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Operation not legal in the object's current lifecycle state.
class StateError : public Error {
public:
    using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace amlora
