#pragma once

#include <stdexcept>
#include <string>

namespace toyfashion {

enum class ErrorKind {
    Bounds,         // index/timestep out of range
    Shape,          // tensor shape mismatch
    Config,         // invalid or inconsistent configuration
    Decode,         // corrupt serialized payload
    Lineage,        // checkpoint chain broken
    Staleness,      // mask cache timeline violated
    Provenance,     // mask fed from a non-designated site
    Vocabulary,     // unknown token or category
    External,       // external client failure after retries
    Usage,          // bad CLI invocation
    Numeric,        // NaN/Inf where finite values are required
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

}  // namespace toyfashion
