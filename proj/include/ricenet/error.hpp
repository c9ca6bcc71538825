#pragma once

#include <stdexcept>
#include <string>

namespace ricenet {

/// Tensor or layer shapes that do not fit together.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user-supplied settings: unknown preset, freeze prefix matching nothing, etc.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A broken internal contract, e.g. a stale forward cache or an argmax index out of range.
class ConsistencyError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite values encountered where finite ones are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ricenet
