#pragma once

#include <stdexcept>
#include <string>

namespace echoset {

/// Invalid input parameters (out-of-range values, inconsistent shapes).
class ParameterError : public std::invalid_argument {
public:
    explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or truncated tensor / metadata file.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Solver aborted: CFL violation or a non-finite field.
class SimulationError : public std::runtime_error {
public:
    explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace echoset
