#pragma once

#include <stdexcept>
#include <string>

namespace regionprune {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent shapes, out-of-range parameters, malformed records.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A configuration the toolkit deliberately does not handle.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated input files.
class IngestError : public Error {
public:
    using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

/// The LP oracle could not certify a decision even after re-solving.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace regionprune
