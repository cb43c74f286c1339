#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pcs {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Spatial sizes that do not divide (stride, pooling, block size).
class GeometryError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or unknown names.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing or unusable training/evaluation data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed file. Carries the byte offset where decoding stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Non-finite loss during training.
class DivergenceError : public Error {
public:
    explicit DivergenceError(std::uint64_t iteration)
        : Error("training diverged: non-finite loss at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}

    std::uint64_t iteration() const noexcept { return iteration_; }

private:
    std::uint64_t iteration_;
};

}  // namespace pcs
