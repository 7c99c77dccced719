#pragma once

#include <stdexcept>
#include <string>

namespace rgf {

/// Error type thrown on any contract violation (bad input, malformed file,
/// inconsistent configuration). Callers that need to distinguish causes
/// match on the message prefix.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace rgf
