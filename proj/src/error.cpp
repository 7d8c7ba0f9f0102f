#include "pnr/error.hpp"

namespace pnr {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ZeroRow: return "ZeroRow";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::BadDims: return "BadDims";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::NormViolation: return "NormViolation";
        case ErrorCode::MissingPredictorOutput: return "MissingPredictorOutput";
        case ErrorCode::BatchTooSmall: return "BatchTooSmall";
        case ErrorCode::ZeroVarianceColumn: return "ZeroVarianceColumn";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::IndivisibleClasses: return "IndivisibleClasses";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::DivergenceDetected: return "DivergenceDetected";
        case ErrorCode::SingleClass: return "SingleClass";
        case ErrorCode::DegenerateFeatures: return "DegenerateFeatures";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::SingleTask: return "SingleTask";
        case ErrorCode::MissingFt: return "MissingFt";
        case ErrorCode::RejectionExhausted: return "RejectionExhausted";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::ChecksumFail: return "ChecksumFail";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

}  // namespace pnr
