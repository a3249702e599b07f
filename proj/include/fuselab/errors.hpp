#pragma once

#include <stdexcept>
#include <string>

namespace fuselab {

// Shape/extent violations (mismatched matmul operands, odd extents into a
// stride-2 encoder, reshape count mismatch, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration detected at construction time.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken API contract (e.g. backward() on a non-scalar tensor).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk container.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A metric has no defined value on the given input.
struct MetricUndefinedError : std::runtime_error {
    explicit MetricUndefinedError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value where the numeric contract forbids one.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fuselab
