#pragma once

#include <stdexcept>
#include <string>

namespace salfom {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor or volume dimensions disagree with what an operation requires.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk container (bad magic, truncated payload, unknown dtype).
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

// All-zero maps and similar inputs that cannot be turned into a distribution.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class DegenerateVarianceError : public Error {
public:
    using Error::Error;
};

// A metric has no value for the given operands (e.g. every pixel fixated).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace salfom
