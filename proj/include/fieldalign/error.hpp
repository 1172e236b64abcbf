#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fieldalign {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Gram matrix could not be factorized. Carries the closest pair of points.
class SingularityError : public Error {
public:
    SingularityError(const std::string& what, std::ptrdiff_t i, std::ptrdiff_t j)
        : Error(what), first_(i), second_(j) {}

    std::ptrdiff_t first() const noexcept { return first_; }
    std::ptrdiff_t second() const noexcept { return second_; }

private:
    std::ptrdiff_t first_;
    std::ptrdiff_t second_;
};

/// A field was requested with every point masked out.
class EmptyFieldError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fieldalign
