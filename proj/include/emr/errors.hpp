#pragma once
// Exception taxonomy shared by the library and the command-line tool.
//
// DomainError      — request outside the mathematical domain (alpha outside the
//                    spectrum's range, potential class violated, ...).
// UsageError       — malformed input: unknown config keys, bad formula strings,
//                    inconsistent flags.
// ConvergenceError — an iteration exhausted its budget without meeting its
//                    tolerance; carries whatever diagnostics the solver had.
// NumericError     — an internal numerical invariant failed (ambiguous leading
//                    eigenvalue, loss of positivity, ...).

#include <stdexcept>
#include <string>

namespace emr {

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace emr
