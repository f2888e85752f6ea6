#pragma once

#include <stdexcept>
#include <string>

namespace metagate {

/// Caller broke a documented precondition (shape mismatch, empty set, ...).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

/// A non-finite value escaped a computation.
struct NumericError : std::runtime_error {
    NumericError(const std::string& primitive, const std::string& what)
        : std::runtime_error(primitive + ": " + what), primitive_name(primitive) {}
    std::string primitive_name;
};

/// Invalid configuration (unknown family, degenerate split, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Inconsistent or missing records/datasets.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// CDS on a trajectory that never moved.
struct DegenerateTrajectory : std::domain_error {
    using std::domain_error::domain_error;
};

inline void require(bool cond, const char* msg) {
    if (!cond) throw ContractViolation(msg);
}
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

}  // namespace metagate
