#pragma once

#include <stdexcept>
#include <string>

namespace ssync {

/// Malformed or out-of-range configuration input. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible tensor shapes passed to an operation.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A guaranteed internal property failed to hold (degenerate softmax row,
/// duplicate cache key, ...). Maps to CLI exit code 3.
class InvariantError : public std::runtime_error {
public:
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File format or filesystem failure while reading/writing artifacts.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ssync
