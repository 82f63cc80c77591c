#pragma once

#include <stdexcept>
#include <string>
#include <functional>

namespace fieldgen {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss / sampler state. CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Warning sink. Default writes "[warn] ..." to stderr; tests may install a
// counter to assert that a path warns instead of throwing.
void warn(const std::string& msg);
void set_warn_handler(std::function<void(const std::string&)> handler);

}  // namespace fieldgen
