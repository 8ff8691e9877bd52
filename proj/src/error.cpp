#include "funcstart/error.hpp"

namespace funcstart {

std::string_view error_kind_name(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::MalformedPe: return "MalformedPe";
    case ErrorKind::UnsupportedMachine: return "UnsupportedMachine";
    case ErrorKind::UnmappedRva: return "UnmappedRva";
    case ErrorKind::UnbackedRva: return "UnbackedRva";
    case ErrorKind::NotX64: return "NotX64";
    case ErrorKind::MalformedPdata: return "MalformedPdata";
    case ErrorKind::UnmappedRange: return "UnmappedRange";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::DuplicateStart: return "DuplicateStart";
    case ErrorKind::StartOutsideImage: return "StartOutsideImage";
    case ErrorKind::EncodingMismatch: return "EncodingMismatch";
    case ErrorKind::UnmappedFunction: return "UnmappedFunction";
    case ErrorKind::UnmappedStart: return "UnmappedStart";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::EmptyValidation: return "EmptyValidation";
    case ErrorKind::DegenerateCounts: return "DegenerateCounts";
    case ErrorKind::SpecInfeasible: return "SpecInfeasible";
    case ErrorKind::ModelFormat: return "ModelFormat";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(error_kind_name(kind)) + ": " + detail)
    , kind_(kind)
{
}

} // namespace funcstart
