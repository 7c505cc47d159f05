#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gcap {

/// Input or weight shapes do not chain.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A precondition on a scalar or index argument was violated.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed file contents; carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(std::size_t epoch)
        : std::runtime_error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)),
          epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace gcap
