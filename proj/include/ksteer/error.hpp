#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ksteer {

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class InvalidLabel : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

class NumericOverflow : public Error {
public:
    NumericOverflow(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    [[nodiscard]] std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Bad magic, version or truncated binary container.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Malformed JSON input; `index` is the offending record.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t index)
        : Error(what + " (record " + std::to_string(index) + ")"), index_(index) {}
    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Malformed exchange frame; `offset` is the byte offset inside the frame.
class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, std::size_t offset)
        : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A hook broke the same-shape contract.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class JudgeUnavailable : public Error {
public:
    using Error::Error;
};

class JudgeParseError : public Error {
public:
    using Error::Error;
};

}  // namespace ksteer
