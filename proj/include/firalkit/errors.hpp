#pragma once

#include <stdexcept>
#include <string>

namespace firalkit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for malformed user input (config files, flags, data files).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Numerical failures. The CLI maps these to exit code 2.
class NumericalError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class SizeCap : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
public:
    NotPositiveDefinite(const std::string& what, long pivot_index)
        : NumericalError(what), pivot_(pivot_index) {}
    long pivot() const noexcept { return pivot_; }

private:
    long pivot_;
};

class ConvergenceFailure : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// CG met p^T A p <= 0, i.e. the operator is not SPD.
class BreakdownError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SingularSigma : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DenominatorNonpositive : public NumericalError {
public:
    using NumericalError::NumericalError;
};

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionMismatch(what);
}

} // namespace firalkit
