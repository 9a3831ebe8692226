#include "corefusion/error.hpp"

namespace corefusion {

const char* to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::malformed_file: return "malformed_file";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::checksum_mismatch: return "checksum_mismatch";
    case ErrorCode::degenerate_similarity: return "degenerate_similarity";
    case ErrorCode::insufficient_negatives: return "insufficient_negatives";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    }
    return "unknown";
}

void fail(ErrorCode code, const std::string& message)
{
    throw Error(code, message);
}

} // namespace corefusion
