#pragma once

#include <stdexcept>
#include <string>

namespace reslab {

// Malformed input: bad JSON, unknown fields, syntax errors, failed validation.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t pos)
        : InputError(what + " at position " + std::to_string(pos)), position(pos) {}
    std::size_t position;
};

// Solver trouble: non-convergence, invalid series, singular systems.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace reslab
