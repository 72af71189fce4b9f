#pragma once

#include <stdexcept>
#include <string>

namespace advmr {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/op shape violations. Message names the primitive and the dims.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Bad configuration or flag values (CLI exit code 1).
class UsageError : public Error {
public:
    using Error::Error;
};

// On-disk data problems: datasets, checkpoints, run dirs (CLI exit code 2).
class DataError : public Error {
public:
    enum class Code {
        io,
        malformed,
        version_mismatch,
        checksum_mismatch,
        truncated,
        missing,
    };

    DataError(Code code, const std::string& msg) : Error(msg), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

// NaN/Inf escapes, divergence (CLI exit code 3).
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace advmr
