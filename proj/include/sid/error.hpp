#pragma once

#include <stdexcept>
#include <string>

namespace sid {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Domain or validation failure: bad arguments, violated invariants,
/// degenerate inputs. The CLI maps these to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Optimization could not proceed (single-class data, non-finite loss).
class TrainingError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Filesystem failure. The CLI maps these to exit code 3.
class IoError : public Error {
public:
    using Error::Error;
};

enum class FormatErrorKind {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    NonFinite,
    DimMismatch,
    Invalid,
    Schema,
};

const char* to_string(FormatErrorKind kind);

/// A file was readable but its contents are malformed.
class FormatError : public IoError {
public:
    FormatError(FormatErrorKind kind, const std::string& what)
        : IoError(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    FormatErrorKind kind() const noexcept { return kind_; }

private:
    FormatErrorKind kind_;
};

inline const char* to_string(FormatErrorKind kind) {
    switch (kind) {
        case FormatErrorKind::BadMagic: return "bad magic";
        case FormatErrorKind::UnsupportedVersion: return "unsupported version";
        case FormatErrorKind::Truncated: return "truncated";
        case FormatErrorKind::NonFinite: return "non-finite value";
        case FormatErrorKind::DimMismatch: return "dim mismatch";
        case FormatErrorKind::Invalid: return "invalid content";
        case FormatErrorKind::Schema: return "schema violation";
    }
    return "format error";
}

}  // namespace sid
