#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace layerkit {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values: out-of-range probabilities, shape mismatches, zero dims.
class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& msg) : Error(msg) {}
};

// Operation not valid in the current state (e.g. stepping an already-clean latent).
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// Lookup of a key that is not present (e.g. token id not in prompt).
class LookupError : public Error {
public:
    explicit LookupError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Aggregated field-level problems from scenario validation.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> fields)
        : Error(join(fields)), field_errors(std::move(fields)) {}

    std::vector<std::string> field_errors;

private:
    static std::string join(const std::vector<std::string>& fields) {
        std::string out = "scenario validation failed:";
        for (const auto& f : fields) {
            out += "\n  - ";
            out += f;
        }
        return out;
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ParameterError(msg);
}

}  // namespace layerkit
