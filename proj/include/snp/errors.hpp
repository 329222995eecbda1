#pragma once

#include <stdexcept>
#include <string>

namespace snp {

// Exit-code classes for the CLI: usage 1, data/format 2, internal 3.

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, long line = -1)
        : std::runtime_error(line >= 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    long line() const noexcept { return line_; }

private:
    long line_;
};

// Well-formed input whose dependency structure is not a tree.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated shape or state precondition inside the library.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace snp
