#pragma once

#include <stdexcept>
#include <string>

namespace tripletkit {

// Invalid configuration values (widths, schedules, flags).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Shape mismatch between matrices, parameters or files.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated by its caller.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// The dataset cannot supply the requested batch or triplets.
struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Iteration outside [0, t1] of a learning-rate schedule.
struct ScheduleError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed or inconsistent input files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace detail
}  // namespace tripletkit
