#pragma once

#include <stdexcept>
#include <string>

namespace stars {

/// Operand shapes do not line up (reported with both shapes).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numeric domain violation: log of a non-positive value, empty reduction, ...
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An operation was called outside its contract (non-scalar loss,
/// label out of range, backward without reset, batch too small, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Bad or missing configuration / malformed input file. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A required artifact (checkpoint, data file) does not exist. CLI exit code 3.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or other numerical breakdown. CLI exit code 4.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stars
