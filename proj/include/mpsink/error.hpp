#pragma once

#include <stdexcept>
#include <string>

namespace mpsink {

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    Overflow,
    Infeasible,
    SizeGuard,
    NotNormalized,
    NoConvergence,
    Io,
    Config,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::Overflow: return "overflow";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::SizeGuard: return "size guard";
    case ErrorCode::NotNormalized: return "not normalized";
    case ErrorCode::NoConvergence: return "no convergence";
    case ErrorCode::Io: return "i/o";
    case ErrorCode::Config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
    if (!condition) throw Error(code, what);
}

} // namespace mpsink
