#pragma once

#include <stdexcept>
#include <string>

namespace volsynth {

/// Base of every error raised by the library. The CLI maps each subclass to
/// its own exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing column, bad flag, malformed config value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data that violates a precondition (too few rows, non-positive values).
class DataError : public Error {
public:
    using Error::Error;
};

/// Input that cannot be rescaled or normalized because it has no spread.
class DegenerateInputError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite values, failed decompositions, bad objective at the start point.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Parameter vector outside its admissible set.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Raised by the look-ahead audit; `stage` names the pipeline step that leaked.
class LookaheadError : public Error {
public:
    LookaheadError(const std::string& stage, const std::string& what)
        : Error(what), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace volsynth
