#pragma once

#include <stdexcept>
#include <string>

namespace mpd {

/// Malformed or inconsistent user configuration (env/robot/run config files).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between collaborating objects.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Corrupt, truncated or version-mismatched checkpoint / dataset files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A planner or sampler could not produce a result within its budget.
class PlanningFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested operation is not defined for this robot or environment kind.
class Unsupported : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace mpd
