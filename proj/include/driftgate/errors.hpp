#pragma once

#include <stdexcept>
#include <string>

namespace driftgate {

/// Bad input from a caller or a file: wrong shapes, schema violations,
/// out-of-range configuration. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Training produced a non-finite loss.
class DivergedError : public std::runtime_error {
public:
    DivergedError(const std::string& what, std::size_t epoch)
        : std::runtime_error(what), epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

} // namespace driftgate
