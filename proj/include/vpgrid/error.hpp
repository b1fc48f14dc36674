#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vpgrid {

/// Precondition or invariant violated by caller-supplied values.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed file contents. Carries the byte offset where parsing failed.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace vpgrid
