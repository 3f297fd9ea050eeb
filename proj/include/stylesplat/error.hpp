#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stylesplat {

/// Missing or unreadable input (dataset files, images, weights).
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Camera model present in cameras.txt that the loader cannot represent.
class UnsupportedModelError : public LoadError {
public:
    explicit UnsupportedModelError(const std::string& model)
        : LoadError("unsupported camera model '" + model + "' (only PINHOLE and SIMPLE_PINHOLE)"),
          model_(model) {}
    const std::string& model() const noexcept { return model_; }

private:
    std::string model_;
};

/// Container or file header declares a version this reader does not speak.
class VersionError : public std::runtime_error {
public:
    VersionError(const std::string& what, int found)
        : std::runtime_error(what + " (found version " + std::to_string(found) + ")"), found_(found) {}
    int found() const noexcept { return found_; }

private:
    int found_;
};

/// Structured input ended early or contained garbage at a known byte offset.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Stored checksum does not match the payload.
class CorruptionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor/image shapes that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Caller broke a documented precondition (e.g. a render paired with a different scene).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A type invariant would be violated by the requested operation.
class InvariantError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace stylesplat
