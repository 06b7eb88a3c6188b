#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qdm {

enum class ErrorKind {
    InvalidArgument,
    ShapeMismatch,
    BadMagic,
    Truncated,
    DimsOverflow,
    Format,
    Io,
    State,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const char* what) {
    if (!cond) fail(kind, what);
}

}  // namespace qdm
