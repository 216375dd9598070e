#pragma once

#include <stdexcept>
#include <string>

namespace csfm {

/// Base class for all library errors. The exit code is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, int exit_code)
        : std::runtime_error(what), exit_code_(exit_code) {}

    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

/// Malformed input, violated invariant, bad argument.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what, 2) {}
};

/// Degenerate geometry, singular systems, RANSAC failure.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what, 3) {}
};

/// A graph that has to be connected is not.
class DisconnectedError : public Error {
public:
    explicit DisconnectedError(const std::string& what) : Error(what, 4) {}
};

}  // namespace csfm
