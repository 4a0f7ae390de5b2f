#pragma once

#include <stdexcept>
#include <string>

namespace bseg {

// Error taxonomy: callers can catch the base or a specific kind.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape contract violations.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid model/train configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset problems: missing pair, unreadable file, size mismatch.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Metric undefined for the given input (e.g. Hausdorff on an empty mask).
class MetricError : public Error {
public:
    explicit MetricError(const std::string& msg) : Error(msg) {}
};

// Corrupt or incompatible checkpoint file.
class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

// Training aborted (non-finite loss and similar).
class TrainError : public Error {
public:
    explicit TrainError(const std::string& msg) : Error(msg) {}
};

}  // namespace bseg
