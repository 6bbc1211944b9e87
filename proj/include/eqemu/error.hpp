#pragma once

#include <stdexcept>
#include <string>

namespace eqemu {

/// Coarse failure classes. The CLI maps these onto distinct exit codes.
enum class ErrorKind {
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    BlowUp = 5,
    Contamination = 6,
    Divergence = 7,
    SelfCheck = 8,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
    case ErrorKind::BlowUp: return "blow_up";
    case ErrorKind::Contamination: return "contamination";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::SelfCheck: return "self_check";
    }
    return "unknown";
}

inline Error invalid_argument(const std::string& what) { return {ErrorKind::InvalidArgument, what}; }
inline Error format_error(const std::string& what) { return {ErrorKind::Format, what}; }
inline Error io_error(const std::string& what) { return {ErrorKind::Io, what}; }

/// Raised by the steppers when a state stops being finite.
class BlowUpError : public Error {
public:
    BlowUpError(const std::string& what, std::size_t substep)
        : Error(ErrorKind::BlowUp, what), substep_(substep) {}
    std::size_t substep() const noexcept { return substep_; }

private:
    std::size_t substep_;
};

}  // namespace eqemu
