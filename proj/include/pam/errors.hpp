#pragma once

#include <stdexcept>
#include <string>

namespace pam {

// Root of every error thrown by the library. The CLI maps these onto exit
// codes, so each subclass names one failure family.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

class EmptyDataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class UnsupportedModelError : public Error {
public:
    using Error::Error;
};

// Task vector lies (numerically) in the null space of every stored Fisher.
class DegenerateTaskVector : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class IncompleteRunError : public Error {
public:
    using Error::Error;
};

}  // namespace pam
