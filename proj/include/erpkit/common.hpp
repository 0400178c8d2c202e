#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace erpkit {

// Validation failure: bad arguments, malformed configs, contract violations.
// The CLI maps these to exit code 2.
struct SpecError : std::invalid_argument {
    explicit SpecError(const std::string& what) : std::invalid_argument(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct BadMagicError : IoError {
    explicit BadMagicError(const std::string& what) : IoError(what) {}
};

struct UnsupportedVersionError : IoError {
    explicit UnsupportedVersionError(const std::string& what) : IoError(what) {}
};

struct TruncationError : IoError {
    explicit TruncationError(const std::string& what) : IoError(what) {}
};

struct DigestMismatchError : IoError {
    explicit DigestMismatchError(const std::string& what) : IoError(what) {}
};

struct SchemaError : SpecError {
    explicit SchemaError(const std::string& what) : SpecError(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw SpecError(what);
}

} // namespace erpkit
