#pragma once

#include <stdexcept>
#include <string>

namespace pvada {

// Bad user-facing input: malformed flags, invalid configs, impossible requests.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not conform for the named primitive.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Index outside the addressable range.
struct BoundsError : std::runtime_error {
    explicit BoundsError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: calling an operation outside its contract (e.g. backward on a
// non-scalar).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (aborts training).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / stream decoding failures, with position information in the message.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pvada
