#pragma once

#include <stdexcept>
#include <string>

namespace lbv {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid tensor shapes, axis mismatches, bad permutations.
struct ShapeError : Error {
  using Error::Error;
};

/// Malformed files: bad magic, unknown dtype code, truncated payloads.
struct ParseError : Error {
  using Error::Error;
};

/// Well-formed input that violates a domain rule (out-of-range label,
/// ternary entry outside {-1,0,1}, bank id mismatch, ...).
struct ValidationError : Error {
  using Error::Error;
};

/// Bad command-line or config usage.
struct UsageError : Error {
  using Error::Error;
};

/// A broken internal invariant (non-finite gradient, corrupted state).
struct InternalError : Error {
  using Error::Error;
};

}  // namespace lbv
