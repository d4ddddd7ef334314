#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace verhallu {

// Malformed arguments or data shapes passed to an operation.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Hyperparameters or settings outside their legal range.
class InvalidConfig : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A record that could not be decoded. `line()` is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string & what, std::size_t line)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// A decoded record that breaks a schema or cross-record rule.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string & what, std::vector<std::string> ids = {})
        : std::runtime_error(what), ids_(std::move(ids)) {}
    // Offending sample ids, when the failure can be attributed.
    const std::vector<std::string> & ids() const { return ids_; }

private:
    std::vector<std::string> ids_;
};

// A metric requested over an empty population.
class EmptySetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace verhallu
