#pragma once

#include <stdexcept>
#include <string>

namespace semap {

// Base class for every error raised by the library. The CLI maps any Error
// that escapes a subcommand to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Malformed file contents. The message names the path and a line or byte offset.
class FormatError : public Error {
public:
    using Error::Error;
};

// More downstream classes than distinct pre-trained indices can serve.
class CapacityError : public Error {
public:
    using Error::Error;
};

// A downstream class has no examples where at least one is required.
class CoverageError : public Error {
public:
    using Error::Error;
};

class HyperparameterError : public Error {
public:
    using Error::Error;
};

// Non-finite value produced during optimization.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace semap
