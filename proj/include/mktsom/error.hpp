#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mktsom {

// Base of every error thrown by the library. The exit code is what the CLI
// reports when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, int exit_code = 3)
        : std::runtime_error(what), message_(what), exit_code_(exit_code) {}

    const char* what() const noexcept override { return message_.c_str(); }
    int exit_code() const noexcept { return exit_code_; }

    // Prepends context (e.g. the stage name) without changing the type.
    void prefix(const std::string& p) { message_ = p + message_; }

private:
    std::string message_;
    int exit_code_;
};

// Malformed input text (CSV row, config line). Carries the 1-based line.
class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& msg)
        : Error(source + ":" + std::to_string(line) + ": " + msg, 2), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg, 2) {}
};

class AlignmentError : public Error {
public:
    explicit AlignmentError(const std::string& msg) : Error(msg, 3) {}
};

class TuningError : public Error {
public:
    TuningError(const std::string& msg, std::size_t best_count)
        : Error(msg + " (best change-point count " + std::to_string(best_count) + ")", 3),
          best_count_(best_count) {}

    std::size_t best_count() const noexcept { return best_count_; }

private:
    std::size_t best_count_;
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg, 3) {}
};

class ImputationError : public Error {
public:
    explicit ImputationError(const std::string& msg) : Error(msg, 3) {}
};

// A pipeline artifact that should exist on disk does not, or fails its schema.
class ArtifactError : public Error {
public:
    explicit ArtifactError(const std::string& msg) : Error(msg, 3) {}
};

}  // namespace mktsom
