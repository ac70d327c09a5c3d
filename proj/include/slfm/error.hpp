#pragma once

#include <stdexcept>
#include <string>

namespace slfm {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid build-time configuration (even kernel, bad stride, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A primitive produced NaN/Inf, or optimization diverged.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated an operation precondition (non-scalar loss, t out of range, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint/archive I/O failure (corrupt file, missing tensor, dim mismatch).
struct ArchiveError : std::runtime_error {
    explicit ArchiveError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace slfm
