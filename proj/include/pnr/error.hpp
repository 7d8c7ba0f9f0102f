#pragma once

#include <stdexcept>
#include <string>

namespace pnr {

// Every failure the library reports carries one of these codes so callers
// (and the CLI) can map them to exit statuses without string matching.
enum class ErrorCode {
    ZeroRow,
    ShapeMismatch,
    EmptyInput,
    NonFiniteEvaluation,
    NonFiniteValue,
    BadDims,
    EmptyBatch,
    NormViolation,
    MissingPredictorOutput,
    BatchTooSmall,
    ZeroVarianceColumn,
    DimMismatch,
    IndivisibleClasses,
    TooFewSamples,
    DivergenceDetected,
    SingleClass,
    DegenerateFeatures,
    IndexOutOfRange,
    SingleTask,
    MissingFt,
    RejectionExhausted,
    BadMagic,
    VersionMismatch,
    ChecksumFail,
    TruncatedFile,
    InvalidConfig,
    IoError,
    InvalidArgument,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    // I/O failures are reported differently by the CLI (exit 2 vs exit 1).
    bool is_io() const noexcept {
        return code_ == ErrorCode::IoError || code_ == ErrorCode::BadMagic ||
               code_ == ErrorCode::VersionMismatch || code_ == ErrorCode::ChecksumFail ||
               code_ == ErrorCode::TruncatedFile;
    }

private:
    ErrorCode code_;
};

}  // namespace pnr
