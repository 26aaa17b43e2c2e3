#pragma once

#include <stdexcept>
#include <string>

namespace bcart {

enum class ErrorKind {
    invalid_input,
    sampling_failure,
    unsupported,
    numerical,
    stuck_state,
    precondition,
    diagnostic,
    refusal,
};

const char* kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::invalid_input, what);
}

}  // namespace bcart
