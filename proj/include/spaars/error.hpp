#pragma once

#include <stdexcept>
#include <string>

namespace spaars {

// Error classes map onto distinct CLI exit codes (see tools/spaars.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension mismatches, invalid configuration values, unknown names.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad caller-supplied data: empty datasets, empty batches, out-of-range arguments.
class InputError : public Error {
public:
    using Error::Error;
};

/// Non-finite losses, targets or parameters.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Requests an exhaustive oracle cannot serve (environment too large, horizon too long).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Broken internal contracts, e.g. a frozen decoder that changed.
class InvariantError : public Error {
public:
    using Error::Error;
};

}  // namespace spaars
