#pragma once

#include <stdexcept>
#include <string>

namespace poselift {

/// Invalid hyperparameters or malformed run configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor shape disagreement; the message names the offending dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Unreadable or inconsistent files, incompatible datasets or checkpoints.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure: divergence, non-finite gradients, degenerate geometry.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace poselift
