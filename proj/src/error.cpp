#include "knnfuse/error.hpp"

namespace knnfuse {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::EmptySplit: return "EmptySplit";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
        case ErrorCode::DivergedLoss: return "DivergedLoss";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
    }
    return "Unknown";
}

}  // namespace knnfuse
