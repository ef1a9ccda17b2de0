#pragma once

#include <stdexcept>
#include <string>

namespace wavespace {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Index or value outside its declared domain.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Tensor or array dimensions that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input that cannot be normalized (zero energy after DC removal).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Bad user configuration: unknown names, impossible splits, empty sets.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

class IngestionError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    enum class Kind { format, version, truncated, name_mismatch, io };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ResumeError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss during optimization.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace wavespace
