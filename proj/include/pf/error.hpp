#pragma once

#include <stdexcept>
#include <string>

namespace pf {

// Error taxonomy used across the library. Each family corresponds to one
// class of contract violation so callers (and the CLI) can report a stable
// category string.
struct Error : std::runtime_error {
    Error(std::string category, const std::string& msg)
        : std::runtime_error(category + ": " + msg), category_(std::move(category)) {}
    const std::string& category() const { return category_; }

private:
    std::string category_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error("index", msg) {}
};

// NaN/Inf escaping a forward op, zero-norm vectors, etc.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

struct GeometryError : Error {
    explicit GeometryError(const std::string& msg) : Error("geometry", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

// Corrupt or truncated checkpoint/image containers.
struct IntegrityError : Error {
    explicit IntegrityError(const std::string& msg) : Error("integrity", msg) {}
};

// Adapter/checkpoint incompatible with the supplied parameters.
struct CompatibilityError : Error {
    explicit CompatibilityError(const std::string& msg) : Error("compatibility", msg) {}
};

}  // namespace pf
