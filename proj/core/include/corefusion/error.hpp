#pragma once

#include <stdexcept>
#include <string>

namespace corefusion {

enum class ErrorCode {
    precondition,
    shape_mismatch,
    missing_file,
    malformed_file,
    dimension_mismatch,
    checksum_mismatch,
    degenerate_similarity,
    insufficient_negatives,
    non_finite,
    config,
    io,
};

const char* to_string(ErrorCode code) noexcept;

/// Single exception type for the library; `code()` distinguishes failure kinds.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message)
{
    if (!condition)
        fail(code, message);
}

} // namespace corefusion
