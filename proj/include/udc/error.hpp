#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace udc {

/// Bad tensor extents or incompatible operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value; carries the 1-based line number when parsed from a file.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what, std::size_t line = 0)
        : std::invalid_argument(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Missing files, malformed datasets, I/O failures.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structured parse failure in a UDCT file.
class FormatError : public DataError {
public:
    FormatError(const std::string& what, std::size_t offset)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// NaN/Inf values, diverged training, failed gradient checks.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace udc
