#pragma once

#include <stdexcept>
#include <string>

namespace koopguide {

/// Malformed input file (bad JSON, missing fields, truncated data).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input that violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File format or version does not match what the reader expects.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A function was evaluated outside its domain (e.g. log of a non-positive
/// clearance). Optimizers treat this as an infinite objective.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The follower has no admissible control that keeps it safe.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition on caller-supplied arguments.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace koopguide
