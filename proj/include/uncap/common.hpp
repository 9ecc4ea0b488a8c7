#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace uncap {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error {
    using Error::Error;
};

struct InvariantError : Error {
    using Error::Error;
};

struct NetworkError : Error {
    using Error::Error;
};

struct AuthError : Error {
    using Error::Error;
};

// Raised when a planner response does not match the expected output format.
struct FormatError : Error {
    std::string raw;
    FormatError(const std::string& msg, std::string raw_text)
        : Error(msg), raw(std::move(raw_text)) {}
};

// 6 significant digits; the project-wide float formatting for human-facing
// output (reports, message text). Logs keep full precision.
inline std::string fmt_sig6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string fmt_fixed2(double v) {
    char buf[512];  // %.2f of the largest double needs ~315 characters
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace uncap
