#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace cxf {

// Exit-code classes used by the CLI. Library code only tags errors; the
// CLI maps the tag to a process exit code.
enum class ErrorClass : int {
    usage = 1,      // bad flags / bad invocation
    data = 2,       // malformed or inconsistent input files
    invariant = 3,  // internal contract violation
};

// Single exception type carrying a stable machine-readable code
// ("DuplicateId", "ShapeMismatch", ...) plus a human message.
class CxfError : public std::runtime_error {
public:
    CxfError(std::string code, const std::string& message,
             ErrorClass cls = ErrorClass::data)
        : std::runtime_error(message), code_(std::move(code)), class_(cls) {}

    const std::string& code() const noexcept { return code_; }
    ErrorClass error_class() const noexcept { return class_; }

private:
    std::string code_;
    ErrorClass class_;
};

[[noreturn]] inline void raise_data(std::string code, const std::string& message) {
    throw CxfError(std::move(code), message, ErrorClass::data);
}

[[noreturn]] inline void raise_invariant(std::string code, const std::string& message) {
    throw CxfError(std::move(code), message, ErrorClass::invariant);
}

[[noreturn]] inline void raise_usage(std::string code, const std::string& message) {
    throw CxfError(std::move(code), message, ErrorClass::usage);
}

}  // namespace cxf
