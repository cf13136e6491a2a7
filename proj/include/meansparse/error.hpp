#pragma once

#include <stdexcept>
#include <string>

namespace meansparse {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map error classes onto exit codes.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to the operation.
class ShapeError : public Error {
   public:
    using Error::Error;
};

// A computation produced a non-finite value, or diverged.
class NumericError : public Error {
   public:
    using Error::Error;
};

// A parameter lies outside its mathematical domain (e.g. beta <= 0).
class DomainError : public Error {
   public:
    using Error::Error;
};

// Invalid configuration, flag values, or plan contracts.
class ConfigError : public Error {
   public:
    using Error::Error;
};

// Missing, unreadable, or malformed data files.
class DataError : public Error {
   public:
    using Error::Error;
};

}  // namespace meansparse
