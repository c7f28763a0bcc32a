// Error codes shared across the library. Every failure surfaces as an
// afp::Error carrying one of these codes plus a human-readable message.
#pragma once

#include <stdexcept>
#include <string>

namespace afp {

enum class ErrorCode {
    UNREADABLE_FILE,
    UNWRITABLE_PATH,
    NON_3D_DATA,
    NONFINITE_VALUES,
    DEGENERATE_OUTPUT,
    CONSTANT_VOLUME,
    EMPTY_FOREGROUND,
    CONSTANT_FOREGROUND,
    SPEC_INVALID,
    BAD_FRACTIONS,
    SHAPE_INCOMPATIBLE,
    SHAPE_MISMATCH,
    UNKNOWN_TAP_ID,
    EXTRACTOR_NOT_FROZEN,
    LENGTH_MISMATCH,
    DIVERGENCE,
    CONFIG_CONFLICT,
    PATCH_TOO_LARGE,
    COUNT_MISMATCH,
    MISALIGNED,
    CASE_MISMATCH,
    CONFIG_INVALID,
};

inline const char* to_string(ErrorCode c) {
    switch (c) {
        case ErrorCode::UNREADABLE_FILE:      return "UNREADABLE_FILE";
        case ErrorCode::UNWRITABLE_PATH:      return "UNWRITABLE_PATH";
        case ErrorCode::NON_3D_DATA:          return "NON_3D_DATA";
        case ErrorCode::NONFINITE_VALUES:     return "NONFINITE_VALUES";
        case ErrorCode::DEGENERATE_OUTPUT:    return "DEGENERATE_OUTPUT";
        case ErrorCode::CONSTANT_VOLUME:      return "CONSTANT_VOLUME";
        case ErrorCode::EMPTY_FOREGROUND:     return "EMPTY_FOREGROUND";
        case ErrorCode::CONSTANT_FOREGROUND:  return "CONSTANT_FOREGROUND";
        case ErrorCode::SPEC_INVALID:         return "SPEC_INVALID";
        case ErrorCode::BAD_FRACTIONS:        return "BAD_FRACTIONS";
        case ErrorCode::SHAPE_INCOMPATIBLE:   return "SHAPE_INCOMPATIBLE";
        case ErrorCode::SHAPE_MISMATCH:       return "SHAPE_MISMATCH";
        case ErrorCode::UNKNOWN_TAP_ID:       return "UNKNOWN_TAP_ID";
        case ErrorCode::EXTRACTOR_NOT_FROZEN: return "EXTRACTOR_NOT_FROZEN";
        case ErrorCode::LENGTH_MISMATCH:      return "LENGTH_MISMATCH";
        case ErrorCode::DIVERGENCE:           return "DIVERGENCE";
        case ErrorCode::CONFIG_CONFLICT:      return "CONFIG_CONFLICT";
        case ErrorCode::PATCH_TOO_LARGE:      return "PATCH_TOO_LARGE";
        case ErrorCode::COUNT_MISMATCH:       return "COUNT_MISMATCH";
        case ErrorCode::MISALIGNED:           return "MISALIGNED";
        case ErrorCode::CASE_MISMATCH:        return "CASE_MISMATCH";
        case ErrorCode::CONFIG_INVALID:       return "CONFIG_INVALID";
    }
    return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace afp
