#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ktg {

enum class ErrorKind {
    InvalidGraphSize,
    InvalidGraph,
    SamplingFailure,
    Parse,
    Schema,
    Shape,
    InvalidContext,
    CropSize,
    Contract,
    Split,
    Ingestion,
    Config,
    NoResult,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it onto an exit status without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidGraphSize: return "invalid graph size";
        case ErrorKind::InvalidGraph: return "invalid graph";
        case ErrorKind::SamplingFailure: return "sampling failure";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Schema: return "schema error";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::InvalidContext: return "invalid context";
        case ErrorKind::CropSize: return "crop size error";
        case ErrorKind::Contract: return "contract error";
        case ErrorKind::Split: return "split error";
        case ErrorKind::Ingestion: return "ingestion error";
        case ErrorKind::Config: return "config error";
        case ErrorKind::NoResult: return "no result";
        case ErrorKind::Io: return "io error";
    }
    return "error";
}

}  // namespace ktg
