#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kblaze {

enum class ErrorCode {
    MalformedFile,
    VersionUnsupported,
    VersionMismatch,
    IoError,
    DuplicateState,
    DuplicateOptimization,
    UnknownState,
    UnknownOptimization,
    SchemaViolation,
    MalformedProfile,
    EmptyProfile,
    EmptyCandidates,
    EmptyProposal,
    EmptyResults,
    UnsortedThresholds,
    MissingPlaceholder,
    ParseFailure,
    AgentUnavailable,
    ScriptExhausted,
    CredentialMissing,
    ShapeMismatch,
    BackendError,
    InvalidSpec,
    DepthTooLarge,
    UnknownVariant,
    ConfigError,
};

inline std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedFile: return "MalformedFile";
        case ErrorCode::VersionUnsupported: return "VersionUnsupported";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::DuplicateState: return "DuplicateState";
        case ErrorCode::DuplicateOptimization: return "DuplicateOptimization";
        case ErrorCode::UnknownState: return "UnknownState";
        case ErrorCode::UnknownOptimization: return "UnknownOptimization";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::MalformedProfile: return "MalformedProfile";
        case ErrorCode::EmptyProfile: return "EmptyProfile";
        case ErrorCode::EmptyCandidates: return "EmptyCandidates";
        case ErrorCode::EmptyProposal: return "EmptyProposal";
        case ErrorCode::EmptyResults: return "EmptyResults";
        case ErrorCode::UnsortedThresholds: return "UnsortedThresholds";
        case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
        case ErrorCode::ParseFailure: return "ParseFailure";
        case ErrorCode::AgentUnavailable: return "AgentUnavailable";
        case ErrorCode::ScriptExhausted: return "ScriptExhausted";
        case ErrorCode::CredentialMissing: return "CredentialMissing";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::BackendError: return "BackendError";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::DepthTooLarge: return "DepthTooLarge";
        case ErrorCode::UnknownVariant: return "UnknownVariant";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Single exception type for the whole library; the code carries the
/// machine-readable category, the message the human-readable locus.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace kblaze
