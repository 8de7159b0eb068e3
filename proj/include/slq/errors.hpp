#pragma once

#include <stdexcept>

namespace slq {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidMeshError : public Error {
public:
    using Error::Error;
};

/// Bad configuration or violated precondition on user-facing parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Request would exceed a hard resource cap (tree depth, problem size).
class ResourceError : public Error {
public:
    using Error::Error;
};

/// Factorization failure, blow-up, non-convergence.
class NumericError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

}  // namespace slq
