#include "quantdemoire/error.hpp"

namespace qdm {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid argument";
        case ErrorKind::ShapeMismatch: return "shape mismatch";
        case ErrorKind::BadMagic: return "bad magic";
        case ErrorKind::Truncated: return "truncated";
        case ErrorKind::DimsOverflow: return "dims overflow";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::State: return "state";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace qdm
