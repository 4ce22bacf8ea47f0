// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cmega {

/// Violated precondition (shape mismatch, out-of-range parameter).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed or inconsistent user configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, unreadable or inconsistent data on disk. CLI exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A metric that has no value for its input (single-class AUROC, AP without positives).
/// CLI exit code 4.
class UndefinedMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractViolation(what);
}
}  // namespace detail

}  // namespace cmega
