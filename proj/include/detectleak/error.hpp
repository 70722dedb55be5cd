#pragma once

#include <stdexcept>
#include <string>

namespace detectleak {

/// Failure categories; the numeric values double as CLI exit codes.
enum class ErrorKind : int {
    usage = 1,
    data = 2,
    internal = 3,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

/// Caller passed inconsistent arguments or configuration.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Input data is missing, unreadable or inconsistent.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

}  // namespace detectleak
