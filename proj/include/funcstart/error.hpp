#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace funcstart {

enum class ErrorKind {
    MalformedPe,
    UnsupportedMachine,
    UnmappedRva,
    UnbackedRva,
    NotX64,
    MalformedPdata,
    UnmappedRange,
    SchemaError,
    DuplicateStart,
    StartOutsideImage,
    EncodingMismatch,
    UnmappedFunction,
    UnmappedStart,
    EmptyCorpus,
    EmptyValidation,
    DegenerateCounts,
    SpecInfeasible,
    ModelFormat,
    Io,
};

[[nodiscard]] std::string_view error_kind_name(ErrorKind kind) noexcept;

/// Domain error raised by every module. The kind names match the error
/// vocabulary surfaced by the CLI, so callers can branch on `kind()` and
/// users see a stable name in messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail);

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace funcstart
