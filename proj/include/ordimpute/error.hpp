#pragma once

#include <stdexcept>
#include <string>

namespace ordimpute {

/// Malformed or out-of-range input data (CLI exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or scenario (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model fit could not be completed; callers may fall back.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A sampler hit an unrecoverable numerical state (CLI exit code 3).
class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ordimpute
